"""
dcscan - Source Package

Diverse-scan co-training for semi-supervised segmentation: selective-scan
state-space kernels, weak-strong patch mixing, uncertainty-weighted contrastive
fusion and a two-network training loop, all on synthetic desk-scale data.
"""

__version__ = "1.0.0"
__author__ = "dcscan Team"
