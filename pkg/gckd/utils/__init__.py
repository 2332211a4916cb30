"""Utility subpackage for gckd."""
