"""Streaming full-band (48 kHz) speech enhancement engine.

Pipeline: three-way polyphase extraction to 16 kHz sub-channels, compressed
complex STFT features, a two-stage masking + compensation network, and exact
interleave interpolation back to 48 kHz — runnable offline or block-by-block
in real time with 30 ms algorithmic latency.
"""

__version__ = "0.1.0"
