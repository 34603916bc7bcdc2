"""Disentangled multidimensional music similarity toolkit.

Learns a single embedding space partitioned into genre, mood, instrument
and tempo subspaces via conditional triplet metric learning, evaluates it
against triplet test sets and an MFCC vector-quantization baseline, and
serves query-by-example retrieval with per-dimension weights.
"""

__version__ = "0.1.0"
