"""
Selective state-space kernel and 2D scan routes.
"""
