"""Damage assessment pipeline: data, segmentation, contrastive pre-training,
GAN augmentation, siamese classification, fusion and evaluation."""

__version__ = "0.1.0"
