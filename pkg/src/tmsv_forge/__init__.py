"""Phase-modulated synthesis and verification of two-mode squeezed states."""

__version__ = "0.1.0"
