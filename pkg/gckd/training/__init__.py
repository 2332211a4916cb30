"""Warm-up, GCKD adaptation, optimizer, checkpoints and gradient checks."""
