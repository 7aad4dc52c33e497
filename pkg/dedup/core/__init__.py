"""
Core domain: stack traces, datasets, persistent state.
"""
