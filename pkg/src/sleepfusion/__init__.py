"""Dual-modality sleep stage classification: raw-signal CNN and spectrogram
Transformer encoders aligned contrastively and fused by a cross-masked
sequence model."""

__version__ = "0.1.0"
