"""
Losses, metrics, the co-training loop and experiment drivers.
"""
