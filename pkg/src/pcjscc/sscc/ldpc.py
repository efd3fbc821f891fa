"""Quasi-cyclic rate-1/2 LDPC codes with systematic encoding and sum-product decoding.

The base matrix is the IEEE 802.11n rate-1/2 prototype (12 x 24, shifts for
Z = 27, giving n = 648, k = 324). Entry -1 is an all-zero Z x Z block; entry
s >= 0 is the identity cyclically shifted right by s. The same prototype
lifted at Z = 50 gives the (1200, 600) profile.

Codewords are ``[message | parity]``: the first k bits are the message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

BASE_802_11N_R12 = np.array([
    [0, -1, -1, -1, 0, 0, -1, -1, 0, -1, -1, 0, 1, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [22, 0, -1, -1, 17, -1, 0, 0, 12, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [6, -1, 0, -1, 10, -1, -1, -1, 24, -1, 0, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1],
    [2, -1, -1, 0, 20, -1, -1, -1, 25, 0, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1],
    [23, -1, -1, -1, 3, -1, -1, -1, 0, -1, 9, 11, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1],
    [24, -1, 23, 1, 17, -1, 3, -1, 10, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1],
    [25, -1, -1, -1, 8, -1, -1, -1, 7, 18, -1, -1, 0, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1],
    [13, 24, -1, -1, 0, -1, 8, -1, 6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1],
    [7, 20, -1, 16, 22, 10, -1, -1, 23, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1],
    [11, -1, -1, -1, 19, -1, -1, -1, 13, -1, 3, 17, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1],
    [25, -1, 8, -1, 23, 18, -1, 14, 9, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0],
    [3, -1, -1, -1, 16, -1, -1, 2, 25, 5, -1, -1, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0],
], dtype=np.int64)

PROFILES = {648: 27, 1200: 50}

# LLR convention: L = log P(bit=0) / P(bit=1); positive favours 0
_TANH_CLIP = 1.0 - 1e-15


def expand(base: np.ndarray, z: int) -> np.ndarray:
    """Lift a prototype matrix into the dense binary parity-check matrix."""
    mb, nb = base.shape
    h = np.zeros((mb * z, nb * z), dtype=np.uint8)
    eye = np.arange(z)
    for i in range(mb):
        for j in range(nb):
            s = base[i, j]
            if s >= 0:
                h[i * z + eye, j * z + (eye + s) % z] = 1
    return h


def gf2_inv(a: np.ndarray) -> np.ndarray:
    """Inverse of a square binary matrix over GF(2) by Gauss-Jordan elimination."""
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"gf2_inv needs a square matrix, got {a.shape}")
    m = np.concatenate([a.astype(np.uint8) & 1, np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        rows = np.nonzero(m[col:, col])[0]
        if len(rows) == 0:
            raise np.linalg.LinAlgError("matrix is singular over GF(2)")
        piv = col + rows[0]
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
        hit = np.nonzero(m[:, col])[0]
        hit = hit[hit != col]
        m[hit] ^= m[col]
    return m[:, n:]


def gf2_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.int64) @ b.astype(np.int64) % 2).astype(np.uint8)


@dataclass
class LdpcCode:
    """A systematic binary LDPC code ``H c^T = 0`` with ``c = [m | p]``."""

    h: np.ndarray
    max_iterations: int = 20
    _gen: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.uint8)
        m, n = self.h.shape
        k = n - m
        if k <= 0:
            raise ValueError("parity-check matrix must have more columns than rows")
        # p = Hp^{-1} Hs m
        self._gen = gf2_matmul(gf2_inv(self.h[:, k:]), self.h[:, :k])
        self._build_graph()

    @property
    def n(self) -> int:
        return self.h.shape[1]

    @property
    def k(self) -> int:
        return self.h.shape[1] - self.h.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    def _build_graph(self) -> None:
        chk, var = np.nonzero(self.h)  # row-major, so grouped by check
        self.edge_check, self.edge_var = chk, var
        e = len(chk)
        self.check_table = _pad_table(chk, self.h.shape[0], e)
        order = np.argsort(var, kind="stable")
        self.var_table = _pad_table(var[order], self.n, e, order)

    def encode(self, bits: np.ndarray) -> np.ndarray:
        """Encode (k,) or (B, k) message bits into codewords of length n."""
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} message bits, got {bits.shape[-1]}")
        parity = (bits.astype(np.int64) @ self._gen.T.astype(np.int64)) % 2
        return np.concatenate([bits, parity.astype(np.uint8)], axis=-1)

    def syndrome(self, words: np.ndarray) -> np.ndarray:
        return gf2_matmul(np.atleast_2d(words), self.h.T)

    def decode(self, llr: np.ndarray, max_iter: int | None = None):
        """Sum-product belief propagation in the LLR domain.

        ``llr`` is (n,) or (B, n). Returns ``(message_bits, converged, iterations)``
        with the leading shape of the input; a word whose hard decision satisfies
        every check stops updating (iteration count 0 means the channel decision
        already was a codeword).
        """
        llr = np.asarray(llr, dtype=np.float64)
        single = llr.ndim == 1
        llr = np.atleast_2d(llr)
        if llr.shape[1] != self.n:
            raise ValueError(f"expected {self.n} LLRs per word, got {llr.shape[1]}")
        if not np.all(np.isfinite(llr)):
            raise ValueError("LLRs must be finite")
        max_iter = self.max_iterations if max_iter is None else max_iter
        b = llr.shape[0]
        e = len(self.edge_var)
        hard = (llr < 0).astype(np.uint8)
        done = self._satisfied(hard)
        iters = np.zeros(b, dtype=np.int64)
        c2v = np.zeros((b, e + 1))
        v2c = llr[:, self.edge_var]
        for it in range(1, max_iter + 1):
            active = ~done
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            # check-node update: product of tanh over the other edges, in log-magnitude form
            t = np.tanh(np.clip(v2c[idx], -80, 80) / 2.0)
            t = np.concatenate([t, np.ones((len(idx), 1))], axis=1)
            mag = np.log(np.maximum(np.abs(t), 1e-300))
            neg = t < 0
            tab = self.check_table
            row_mag = mag[:, tab].sum(axis=2)
            row_neg = neg[:, tab].sum(axis=2) % 2
            mag_ex = row_mag[:, self.edge_check] - mag[:, :e]
            neg_ex = (row_neg[:, self.edge_check] + neg[:, :e]) % 2
            prod = np.where(neg_ex == 1, -1.0, 1.0) * np.exp(mag_ex)
            msg = 2.0 * np.arctanh(np.clip(prod, -_TANH_CLIP, _TANH_CLIP))
            c2v[idx, :e] = msg
            # variable-node update
            total = llr[idx] + c2v[idx][:, self.var_table].sum(axis=2)
            v2c[idx] = total[:, self.edge_var] - msg
            hard[idx] = (total < 0).astype(np.uint8)
            iters[idx] = it
            done[idx] = self._satisfied(hard[idx])
        out = hard[:, : self.k]
        if single:
            return out[0], bool(done[0]), int(iters[0])
        return out, done, iters

    def _satisfied(self, hard: np.ndarray) -> np.ndarray:
        padded = np.concatenate([hard[:, self.edge_var], np.zeros((len(hard), 1), dtype=np.uint8)], axis=1)
        return ~np.any(padded[:, self.check_table].sum(axis=2) % 2, axis=1)


def _pad_table(groups: np.ndarray, count: int, pad: int, values: np.ndarray | None = None) -> np.ndarray:
    """Rows of edge indices per node, padded with ``pad`` to the maximum degree."""
    values = np.arange(len(groups)) if values is None else values
    deg = np.bincount(groups, minlength=count)
    table = np.full((count, deg.max()), pad, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
    slot = np.arange(len(groups)) - np.repeat(starts, deg)
    table[groups, slot] = values
    return table


@lru_cache(maxsize=None)
def _cached_h(n: int) -> np.ndarray:
    if n not in PROFILES:
        raise ValueError(f"unknown LDPC profile n={n}; choose from {sorted(PROFILES)}")
    return expand(BASE_802_11N_R12, PROFILES[n])


@lru_cache(maxsize=None)
def code_for(n: int = 648, max_iterations: int = 20) -> LdpcCode:
    """The rate-1/2 code of length ``n`` (648 or 1200); instances are shared, treat them as read-only."""
    return LdpcCode(_cached_h(n), max_iterations)


def ldpc_encode(code: LdpcCode, bits: np.ndarray) -> np.ndarray:
    return code.encode(bits)


def ldpc_decode(code: LdpcCode, llrs: np.ndarray, max_iter: int | None = None):
    bits, converged, _ = code.decode(llrs, max_iter)
    return bits, converged
