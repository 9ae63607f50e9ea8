"""tinyvlm: a desk-scale video-to-text lab.

Synthetic moving-shape videos, a from-scratch autodiff engine, a
randomly initialized residual frame encoder fused with a tiny decoder-only
language model, a two-stage training recipe with GP-based hyperparameter
search, and deterministic caption/QA metrics. Served over FastAPI with a
thin CLI client.
"""

__version__ = "0.1.0"
