"""Layout-aware masked pre-training for document understanding, on a numpy autodiff core."""

__version__ = "0.1.0"
