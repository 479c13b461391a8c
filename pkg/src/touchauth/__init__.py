"""Multimodal touch-press authentication pipeline.

Capacitive touch detection and tracking, IMU motion estimation with
cross-modal alignment, fused press embeddings, per-user one-class
verification, biometric evaluation, and a seeded synthetic session
generator for desk-scale validation.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    augment,
    capsense,
    config,
    embed,
    metrics,
    motion,
    oneclass,
    pipeline,
    session_io,
    synth,
)
