"""2D turbulence ground truth and hierarchical autoregressive emulation.

Submodules
----------
solver      pseudo-spectral vorticity integrator and flow diagnostics
autodiff    reverse-mode automatic differentiation primitives
hierarchy   coarse-graining transforms and augmented-state bookkeeping
model       encoder-decoder emulator with multi-resolution heads
training    loss, AdamW, batching, normalization
rollout     autoregressive rollout engines
metrics     accuracy, stability, spectrum, zonal-mean, PCA diagnostics
io          binary trajectory/checkpoint formats and manifests
config      sectioned experiment configuration
cli         the ``emu`` command-line tool
"""

__version__ = "0.1.0"
