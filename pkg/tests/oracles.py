"""Independent numerical oracles shared by the test suite.

These stay deliberately dumb: central finite differences, closed-form
physics, and brute-force statistics. They never call the code paths they
are used to check.
"""

import numpy as np


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest deviation relative to the overall gradient scale.

    A pointwise quotient would amplify float32 forward noise on entries
    that happen to sit near zero, so the denominator is the max magnitude
    across both arrays (with a floor), not the entry itself.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-6)
    return float(np.max(np.abs(a - b)) / denom)


def ballistic_height(h0: float, t: float, g: float = 9.81) -> float:
    """Analytic free-fall height after t seconds from rest."""
    return h0 - 0.5 * g * t * t


def gaussian_frechet_1d(mu_a, var_a, mu_b, var_b) -> float:
    """Closed-form Frechet distance between two 1-D Gaussians."""
    return (mu_a - mu_b) ** 2 + var_a + var_b - 2.0 * np.sqrt(var_a * var_b)


def diagonal_frechet(mu_a, diag_a, mu_b, diag_b) -> float:
    """Closed-form Frechet distance for diagonal-covariance Gaussians."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    diag_a, diag_b = np.asarray(diag_a, float), np.asarray(diag_b, float)
    return float(np.sum((mu_a - mu_b) ** 2)
                 + np.sum((np.sqrt(diag_a) - np.sqrt(diag_b)) ** 2))


def kl_standard_normal(mu, logvar) -> np.ndarray:
    """Per-dimension KL(N(mu, e^logvar) || N(0, 1))."""
    mu = np.asarray(mu, float)
    logvar = np.asarray(logvar, float)
    return 0.5 * (mu ** 2 + np.exp(logvar) - 1.0 - logvar)


def adam_single_update(param, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                       m=0.0, v=0.0, t=1):
    """Hand-evaluated Adam update for a scalar parameter."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + eps), m, v
