"""Self-supervised graph representation learning with fused
Gromov-Wasserstein subgraph contrastive objectives."""

__version__ = "0.1.0"
