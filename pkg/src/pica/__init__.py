"""Double-layer clothed avatars from mesh-anchored flat Gaussians."""

__version__ = "0.1.0"
