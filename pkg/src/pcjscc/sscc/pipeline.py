"""Octree -> LDPC -> modulation -> fading/noise -> LLR -> BP -> octree, end to end.

SNR is Eb/N0 per coded bit. Block fading draws one real Rayleigh gain per
codeword (scale sqrt(2)/2, unit mean power) that the receiver knows and
equalises before computing LLRs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..channel import RAYLEIGH_SCALE, draw_rayleigh
from .ldpc import LdpcCode, code_for
from .modulation import ModulationScheme, demodulate_llr, modulate, noise_variance_ebn0, scheme
from .octree import OctreeCode, OctreeDecodeError, octree_decode, octree_encode

DEFAULT_ITERATIONS = {648: 20, 1200: 80}
DEFAULT_MODULATION = {648: "qam16", 1200: "bpsk"}


class DecodeFailure(Exception):
    """The baseline could not reconstruct; ``stage`` is ``"ldpc"`` or ``"octree"``."""

    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage} decode failure: {detail}")
        self.stage = stage
        self.detail = detail


@dataclass
class SsccConfig:
    depth: int = 8
    ldpc: int = 648
    modulation: str | None = None  # profile default when None
    max_iterations: int | None = None
    channel: str = "awgn"
    llr: str = "exact"

    def __post_init__(self):
        if self.ldpc not in DEFAULT_ITERATIONS:
            raise ValueError(f"unknown LDPC profile {self.ldpc}; choose from {sorted(DEFAULT_ITERATIONS)}")
        if self.modulation is None:
            self.modulation = DEFAULT_MODULATION[self.ldpc]
        scheme(self.modulation)
        if self.max_iterations is None:
            self.max_iterations = DEFAULT_ITERATIONS[self.ldpc]
        if self.channel not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.llr not in ("exact", "maxlog"):
            raise ValueError(f"unknown LLR method {self.llr!r}")

    @property
    def code(self) -> LdpcCode:
        return code_for(self.ldpc, self.max_iterations)

    @property
    def scheme(self) -> ModulationScheme:
        return scheme(self.modulation)


@dataclass
class SsccResult:
    points: np.ndarray | None
    failure: DecodeFailure | None
    info_bits: int  # stream bits, excluding codeword padding
    bit_errors: int
    codewords: int
    unconverged: int
    stream_bytes: int
    symbols: int
    fading: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def status(self) -> str:
        return "ok" if self.failure is None else f"fail:{self.failure.stage}"

    @property
    def ber(self) -> float:
        return self.bit_errors / self.info_bits


def bytes_to_words(data: bytes, k: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    words = -(-len(bits) // k)
    padded = np.zeros(words * k, dtype=np.uint8)
    padded[: len(bits)] = bits
    return padded.reshape(words, k)


def words_to_bytes(words: np.ndarray, nbytes: int) -> bytes:
    return np.packbits(words.reshape(-1)[: nbytes * 8]).tobytes()


def transmit_bits(words: np.ndarray, cfg: SsccConfig, ebn0_db: float, rng: np.random.Generator):
    """LDPC-encode, modulate, pass through the channel and BP-decode a (W, k) block of bits.

    Returns ``(decoded_words, converged, fading)``.
    """
    code, sch = cfg.code, cfg.scheme
    cw = code.encode(words)
    x = modulate(cw, sch)
    if cfg.channel == "rayleigh":
        h = draw_rayleigh(len(words), rng, RAYLEIGH_SCALE)
    else:
        h = np.ones(len(words))
    if math.isinf(ebn0_db) and ebn0_db > 0:
        llr = np.where(cw == 0, 50.0, -50.0)
    else:
        n0 = noise_variance_ebn0(ebn0_db, sch)
        noise = rng.normal(0.0, math.sqrt(n0 / 2), size=x.shape + (2,))
        y = h[:, None] * x + (noise[..., 0] + 1j * noise[..., 1])
        llr = demodulate_llr(y, sch, n0, h, cfg.llr)
        llr = np.clip(llr, -1e6, 1e6)
    decoded, converged, _ = code.decode(llr)
    return decoded, converged, h


def sscc_transmit(points, cfg: SsccConfig, ebn0_db: float, rng: np.random.Generator) -> SsccResult:
    """Send a unit-cube normalised cloud through the separate source/channel coding chain."""
    stream = octree_encode(points, cfg.depth).to_bytes()
    words = bytes_to_words(stream, cfg.code.k)
    decoded, converged, h = transmit_bits(words, cfg, ebn0_db, rng)
    nbits = len(stream) * 8
    errors = int(np.count_nonzero(decoded.reshape(-1)[:nbits] != words.reshape(-1)[:nbits]))
    res = SsccResult(None, None, nbits, errors, len(words), int(np.count_nonzero(~converged)),
                     len(stream), len(words) * cfg.code.n // cfg.scheme.bits_per_symbol, h)
    if res.unconverged:
        res.failure = DecodeFailure("ldpc", f"{res.unconverged} of {len(words)} codewords did not converge")
        return res
    try:
        res.points = octree_decode(words_to_bytes(decoded, len(stream)))
    except OctreeDecodeError as e:
        res.failure = DecodeFailure("octree", str(e))
    return res


def source_only(points, depth: int) -> np.ndarray:
    """The octree reconstruction with a transparent channel."""
    return octree_decode(octree_encode(points, depth))
