"""Metric suite: closed-form oracles, invariances, chance levels."""

import numpy as np
import pytest

from marionette.evalsuite import (EvalError, bootstrap_half_width, diversity,
                                  fid, floating, frechet_from_stats, jerk,
                                  mm_dist, mmodality, r_precision,
                                  world_joint_positions)
from marionette.sim import SimConfig, Simulator, default_character, observe

from oracles import diagonal_frechet, gaussian_frechet_1d

RNG = np.random.default_rng


@pytest.fixture(scope="module")
def top():
    return default_character()


# -- FID --------------------------------------------------------------------------

def test_fid_identical_sets_zero():
    x = RNG(0).normal(size=(200, 8))
    assert abs(fid(x, x.copy())) < 1e-6


def test_fid_univariate_gaussian_oracle():
    rng = RNG(1)
    a = rng.normal(0.0, 1.0, (100_000, 1))
    b = rng.normal(1.0, 1.0, (100_000, 1))
    expect = gaussian_frechet_1d(0.0, 1.0, 1.0, 1.0)   # = 1
    assert abs(fid(a, b) - expect) < 0.05


def test_fid_diagonal_closed_form():
    rng = RNG(2)
    mu_a, mu_b = np.array([0.5, -1.0, 2.0]), np.array([0.0, 0.0, 1.0])
    sd_a, sd_b = np.array([1.0, 2.0, 0.5]), np.array([1.5, 1.0, 1.0])
    n = 400_000
    a = rng.normal(size=(n, 3)) * sd_a + mu_a
    b = rng.normal(size=(n, 3)) * sd_b + mu_b
    expect = diagonal_frechet(mu_a, sd_a ** 2, mu_b, sd_b ** 2)
    assert abs(fid(a, b) - expect) / expect < 0.01


def test_fid_exact_diagonal_closed_form():
    # with exactly diagonal covariances the distance has an elementwise form
    rng = RNG(3)
    for _ in range(5):
        mu_a = rng.normal(size=4)
        mu_b = rng.normal(size=4)
        da = rng.uniform(0.2, 3.0, 4)
        db = rng.uniform(0.2, 3.0, 4)
        got = frechet_from_stats(mu_a, np.diag(da), mu_b, np.diag(db))
        expect = diagonal_frechet(mu_a, da, mu_b, db)
        assert abs(got - expect) < 1e-6


def test_fid_symmetry_and_nonnegativity():
    rng = RNG(4)
    a = rng.normal(size=(300, 6))
    b = rng.normal(0.3, 1.2, size=(280, 6))
    ab, ba = fid(a, b), fid(b, a)
    assert abs(ab - ba) < 1e-6
    assert ab >= 0.0


def test_fid_shrinkage_small_sets():
    rng = RNG(5)
    a = rng.normal(size=(10, 32))
    b = rng.normal(size=(12, 32))
    val = fid(a, b)
    assert np.isfinite(val) and val >= 0.0


# -- retrieval -----------------------------------------------------------------------

def test_r_precision_perfect_match():
    e = np.eye(8)
    tops = r_precision(e, e, 8, RNG(0), repeats=5)
    np.testing.assert_allclose(tops, [1.0, 1.0, 1.0])


def test_r_precision_chance_level():
    rng = RNG(6)
    n, batch = 320, 32
    trials = []
    for _ in range(200):
        m = rng.normal(size=(n, 8))
        t = rng.normal(size=(n, 8))
        tops = r_precision(m, t, batch, rng, repeats=1)
        trials.append(tops[0])
    mean_top1 = np.mean(trials)
    chance = 1.0 / batch
    # 200 trials x 10 batches x 32 samples of a Bernoulli(1/32)
    sigma = np.sqrt(chance * (1 - chance) / (200 * (n // batch) * batch))
    assert abs(mean_top1 - chance) < 3 * sigma


def test_r_precision_monotone_topk():
    rng = RNG(7)
    m = rng.normal(size=(64, 8))
    t = rng.normal(size=(64, 8))
    tops = r_precision(m, t, 8, rng, repeats=10)
    assert tops[0] <= tops[1] <= tops[2]


def test_r_precision_validation():
    e = np.eye(4)
    with pytest.raises(EvalError):
        r_precision(e, e, 1, RNG(0))
    with pytest.raises(EvalError):
        r_precision(e, e, 8, RNG(0))
    with pytest.raises(EvalError):
        r_precision(e, e, 3, RNG(0), labels=["a", "a", "b", "b"])


def test_r_precision_distinct_labels():
    # matched embeddings identical, others far: top-1 must be perfect
    rng = RNG(8)
    base = np.eye(4)
    m = np.concatenate([base, base])
    t = np.concatenate([base, base])
    labels = ["a", "b", "c", "d", "a", "b", "c", "d"]
    tops = r_precision(m, t, 4, rng, repeats=10, labels=labels)
    assert tops[0] == 1.0


# -- paired metrics --------------------------------------------------------------------

def test_identical_embeddings_zero_metrics():
    e = np.ones((16, 4))
    assert mm_dist(e, e) == 0.0
    assert diversity(e, RNG(0), 4) == 0.0
    assert mmodality([e[:4], e[4:8]]) == 0.0


def test_mm_dist_antipodal():
    a = np.zeros((5, 3))
    a[:, 0] = 1.0
    b = -a
    assert mm_dist(a, b) == pytest.approx(2.0)


def test_diversity_seed_stability():
    rng = RNG(9)
    e = rng.normal(size=(200, 8))
    vals = [diversity(e, RNG(s), 32) for s in range(24)]
    spread = np.std(vals)
    boot = bootstrap_half_width(vals, RNG(1), repeats=500)
    assert abs(vals[0] - np.mean(vals)) < 3 * (spread + boot + 1e-9)


def test_mmodality_group_validation():
    with pytest.raises(EvalError):
        mmodality([np.ones((1, 3))])


def test_permutation_invariance():
    rng = RNG(10)
    m = rng.normal(size=(40, 6))
    t = rng.normal(size=(40, 6))
    perm = rng.permutation(40)
    assert mm_dist(m, t) == pytest.approx(mm_dist(m[perm], t[perm]))
    assert fid(m, t) == pytest.approx(fid(m[perm], t), abs=1e-9)


# -- physics metrics ----------------------------------------------------------------------

def _standing_states(top, frames=20, hover=0.0):
    sim = Simulator(top, SimConfig())
    s = sim.reset("neutral_stand")
    if hover:
        s.pos[:, 1] += hover
    return np.stack([observe(s, top)] * frames)


def test_floating_feet_on_ground(top):
    states = _standing_states(top)
    assert floating(states, top) == pytest.approx(0.0, abs=1e-4)


def test_floating_constant_hover(top):
    states = _standing_states(top, hover=0.005)
    assert floating(states, top) == pytest.approx(5.0, abs=0.1)


def test_floating_mean_of_mixed_frames(top):
    a = _standing_states(top, frames=10, hover=0.0)
    b = _standing_states(top, frames=10, hover=0.010)
    states = np.concatenate([a, b])
    assert floating(states, top) == pytest.approx(5.0, abs=0.1)


def test_floating_airborne_threshold(top):
    states = _standing_states(top, hover=0.5)   # clearly a jump: excluded
    assert floating(states, top) is None


def test_jerk_constant_velocity_zero(top):
    states = _standing_states(top, frames=12)
    # constant root velocity: world positions advance linearly
    v0 = 1 + 2 * top.n_joints + 2 * top.n_links
    states[:, v0 + 2 * top.root_index] = 0.3
    assert jerk(states, top) == pytest.approx(0.0, abs=1e-4)


def test_jerk_cubic_oracle(top):
    """A single joint moving as t^3/6 mm has unit third difference."""
    frames = 30
    states = _standing_states(top, frames=frames)
    t = np.arange(frames, dtype=np.float64)
    zpath = (t ** 3) / 6.0 / 1000.0     # meters
    states[:, 0] += zpath.astype(np.float32)   # root height carries all joints
    val = jerk(states, top)
    assert val == pytest.approx(1.0, rel=1e-3)


def test_jerk_needs_four_frames(top):
    with pytest.raises(EvalError):
        jerk(_standing_states(top, frames=3), top)


def test_smoothing_never_increases_jerk(top):
    rng = RNG(11)
    for _ in range(5):
        frames = 60
        states = _standing_states(top, frames=frames)
        walk = np.cumsum(np.cumsum(rng.normal(0, 1e-3, frames)))
        states[:, 0] += walk.astype(np.float32)
        smooth = states.copy()
        kernel = np.ones(3) / 3.0
        smooth[1:-1, 0] = np.convolve(states[:, 0], kernel, mode="valid")
        assert jerk(smooth[1:-1], top) <= jerk(states, top) + 1e-9


def test_world_joint_positions_reintegrates_root(top):
    states = _standing_states(top, frames=10)
    v0 = 1 + 2 * top.n_joints + 2 * top.n_links
    states[:, v0 + 2 * top.root_index] = 0.3
    pos = world_joint_positions(states, top)
    dx = np.diff(pos[:, 0, 0])
    np.testing.assert_allclose(dx, 0.01, atol=1e-6)
