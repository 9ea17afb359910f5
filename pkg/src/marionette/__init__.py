"""marionette: text-driven physics-based planar character control.

A desk-scale stack: a 2D articulated-character simulator, a scripted
expert corpus, a latent-intent VAE, three jointly trained diffusion
models driving chunked autoregressive control, an evaluation suite, and
a live websocket control service.
"""

__version__ = "0.1.0"
