"""Logic-aware story visualization: planning, causal verification,
generation orchestration, and a benchmark evaluation harness."""

__version__ = "0.1.0"
