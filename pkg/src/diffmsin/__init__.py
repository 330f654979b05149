"""Multi-modal CTR prediction with diffusion-based cross-modal synergy capture."""
__version__ = "0.1.0"
