"""
Configuration, logging and environment helpers for dcscan.
"""
