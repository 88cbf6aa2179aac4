"""LoRA fine-tuning with per-factor learning rates and density-aware pair scoring."""

__version__ = "0.1.0"
