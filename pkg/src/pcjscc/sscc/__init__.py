"""Separate source-channel coding baseline: octree + LDPC + BPSK/16-QAM."""

from .pipeline import DecodeFailure, SsccConfig, SsccResult, source_only, sscc_transmit

__all__ = ["DecodeFailure", "SsccConfig", "SsccResult", "source_only", "sscc_transmit"]
