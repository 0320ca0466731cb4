"""Insertion-based sequence generation at desk scale.

A small encoder-decoder model that learns to insert tokens anywhere in a
growing output canvas, trained with left-to-right, balanced-binary-tree, or
uniform losses, and decoded serially or in parallel (roughly log2(n)+1
iterations for length-n outputs).
"""

__version__ = "0.1.0"
