"""Goal-conditioned TD3 with hindsight relabeling and a guide-gated
behaviour-cloning term, on deterministic desk-scale manipulation tasks."""

__version__ = "0.1.0"
