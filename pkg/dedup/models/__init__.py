"""
Neural models: shared layers, the embedding model and the reranker.
"""
