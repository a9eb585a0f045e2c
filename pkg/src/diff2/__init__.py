"""Differentially private distributed optimization via gradient differences."""

__version__ = "0.1.0"
