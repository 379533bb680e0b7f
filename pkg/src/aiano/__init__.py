"""AI-augmented annotation backend for building information-retrieval datasets."""

__version__ = "0.1.0"
