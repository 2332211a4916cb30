"""Synthetic dataset generation and record files."""
