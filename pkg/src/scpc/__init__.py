"""Segmental contrastive predictive coding for unsupervised speech segmentation.

The package trains a small convolutional/recurrent model on raw waveforms with
two contrastive objectives (next-frame and next-segment classification), finds
segment boundaries with a differentiable peak detector, and evaluates predicted
phoneme and word boundaries against reference alignments.
"""

__version__ = "0.1.0"
