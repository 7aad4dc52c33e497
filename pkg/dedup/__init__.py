"""
trace-dedup: stack trace deduplication with a biLSTM embedding model,
top-K retrieval and a cross-encoder reranker.
"""

__version__ = "0.1.0"
