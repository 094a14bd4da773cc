"""Graph-based biaffine dependency parsing with cross-variety transfer tooling."""

__version__ = "0.1.0"
