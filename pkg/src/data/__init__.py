"""
Synthetic datasets, augmentation and file formats.
"""
