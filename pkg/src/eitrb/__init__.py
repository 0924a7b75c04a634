"""Edge-preserving EIT reconstruction with a projected-out contact model and POD acceleration."""

__version__ = "0.1.0"
