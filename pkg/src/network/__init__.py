"""
VSS blocks, the segmentation network, projectors and checkpoints.
"""
