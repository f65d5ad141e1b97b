"""Self-supervised representation learning for fine-grained image domains."""

__version__ = "0.1.0"
