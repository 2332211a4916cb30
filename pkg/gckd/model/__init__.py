"""Encoders, memory banks, cross-domain graph and EMA distillation."""
