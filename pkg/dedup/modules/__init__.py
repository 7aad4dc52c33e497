"""
Engine modules: tokenizer, embedding store, baselines, pipelines, evaluation.
"""
