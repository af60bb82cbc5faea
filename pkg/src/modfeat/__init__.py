"""Semi-supervised domain generalization with prototype-anchored feature
modulation, uncertainty-gated pseudo-labeling, and confidence-scaled
losses, plus a fixed-threshold baseline mode for controlled comparison."""

__version__ = "0.1.0"
