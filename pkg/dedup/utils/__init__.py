"""
Shared utilities: logging setup and binary artifact containers.
"""
