"""Graph-based cross-domain knowledge distillation for text-to-image retrieval."""

__version__ = "0.1.0"
