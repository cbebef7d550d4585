"""seqaug: guided-diffusion pre-order augmentation for sequential recommenders."""

__version__ = "0.1.0"
