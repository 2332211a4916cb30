"""Cross-domain contrast and matching losses and the weighted objective."""
