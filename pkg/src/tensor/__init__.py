"""
Float64 tensors with tape-based reverse-mode differentiation.
"""
