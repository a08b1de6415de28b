"""Entropy-distortion tradeoffs of circular-topology sources.

Exact bounds and optimal quantizers for the unit circle and the ramp
process, plus a small numpy autoencoder compressor trained on the same
sources for comparison.
"""

__version__ = "0.1.0"
