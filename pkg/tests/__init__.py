"""
Tests for dcscan.
"""
