"""Kernelized distance probes over contextual word embeddings.

Trains a single projection matrix so that a kernel-induced distance
between projected word vectors matches syntactic tree distances, decodes
trees from the learned metric, and scores them.
"""

__version__ = "0.1.0"
