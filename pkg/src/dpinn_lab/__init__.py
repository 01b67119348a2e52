"""Physics-informed neural networks with domain decomposition for convection-diffusion problems."""

__version__ = "0.1.0"
