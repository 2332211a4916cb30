"""Retrieval metrics, ablation sweeps and transfer benchmarks."""
