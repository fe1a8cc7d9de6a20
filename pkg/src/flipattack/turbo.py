"""Rate-1/2 parallel concatenated turbo code with (7, 5) RSC constituents.

Constituent encoder: recursive systematic, feedback 1 + D + D^2 (octal 7),
feedforward 1 + D^2 (octal 5).  Parity is punctured alternately (encoder 1
on even info positions, encoder 2 on odd ones) and both trellises are
terminated with two tail steps each.

Coded block layout for K info bits (length 2K + 8)::

    [u_0, p_0, u_1, p_1, ..., u_{K-1}, p_{K-1},
     tail1 (u, p) x 2, tail2 (u, p) x 2]

LLR convention: L = log P(bit = 0) / P(bit = 1), so positive favours 0.
BPSK maps bit 0 to +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dsss import StructureError

MEMORY = 2
NUM_STATES = 4
TAIL_BITS = 4 * MEMORY


def _trellis():
    # state = (a_{k-1}, a_{k-2}) packed as 2*a1 + a2
    nxt = np.zeros((NUM_STATES, 2), dtype=np.int64)
    par = np.zeros((NUM_STATES, 2), dtype=np.int64)
    term = np.zeros(NUM_STATES, dtype=np.int64)
    for s in range(NUM_STATES):
        s1, s2 = s >> 1, s & 1
        term[s] = s1 ^ s2
        for u in (0, 1):
            a = u ^ s1 ^ s2
            nxt[s, u] = (a << 1) | s1
            par[s, u] = a ^ s2
    return nxt, par, term


NEXT_STATE, PARITY, TERM_INPUT = _trellis()


@dataclass(frozen=True)
class TurboConfig:
    block_length: int = 3968
    iterations: int = 10
    interleaver_seed: int = 0x7F5
    generators: tuple[int, int] = field(default=(7, 5))

    def __post_init__(self):
        if self.block_length < 1:
            raise ValueError("block_length must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if tuple(self.generators) != (7, 5):
            raise ValueError("only the (7, 5) octal RSC constituent is implemented")

    @property
    def coded_length(self) -> int:
        return 2 * self.block_length + TAIL_BITS

    def interleaver(self) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([int(self.interleaver_seed), self.block_length]))
        return rng.permutation(self.block_length)


@dataclass(frozen=True)
class CodedBlock:
    info_bits: np.ndarray
    coded_bits: np.ndarray

    @property
    def actual_rate(self) -> float:
        return self.info_bits.size / self.coded_bits.size


@njit(cache=True)
def _rsc_encode(bits, nxt, par, term):
    b, k = bits.shape
    sys = np.empty((b, k + MEMORY), dtype=np.int8)
    out = np.empty((b, k + MEMORY), dtype=np.int8)
    for i in range(b):
        state = 0
        for t in range(k + MEMORY):
            u = bits[i, t] if t < k else term[state]
            sys[i, t] = u
            out[i, t] = par[state, u]
            state = nxt[state, u]
    return sys, out


def rsc_encode(bits: np.ndarray):
    """Encode rows of ``bits`` (B, K); returns systematic + parity incl. tail.

    Output arrays have shape (B, K + 2): the last two columns are the
    terminating inputs and their parity, which return the encoder to state 0.
    """
    bits = np.ascontiguousarray(np.atleast_2d(bits), dtype=np.int64)
    return _rsc_encode(bits, NEXT_STATE, PARITY, TERM_INPUT)


def encode_batch(bits: np.ndarray, cfg: TurboConfig) -> np.ndarray:
    """Turbo-encode rows of ``bits`` (B, K) into (B, 2K + 8) coded bits."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int8))
    k = cfg.block_length
    if bits.shape[1] != k:
        raise StructureError(f"expected {k} info bits per block, got {bits.shape[1]}")
    sys1, par1 = rsc_encode(bits)
    sys2, par2 = rsc_encode(bits[:, cfg.interleaver()])
    out = np.empty((bits.shape[0], cfg.coded_length), dtype=np.int8)
    body = out[:, : 2 * k].reshape(-1, k, 2)
    body[:, :, 0] = bits
    body[:, :, 1] = np.where(np.arange(k) % 2 == 0, par1[:, :k], par2[:, :k])
    tail = out[:, 2 * k:].reshape(-1, 2, MEMORY, 2)
    tail[:, 0, :, 0] = sys1[:, k:]
    tail[:, 0, :, 1] = par1[:, k:]
    tail[:, 1, :, 0] = sys2[:, k:]
    tail[:, 1, :, 1] = par2[:, k:]
    return out


def encode(bits, cfg: TurboConfig) -> CodedBlock:
    bits = np.asarray(bits, dtype=np.int8)
    if bits.ndim != 1 or bits.size != cfg.block_length:
        raise StructureError(f"expected {cfg.block_length} info bits, got shape {bits.shape}")
    return CodedBlock(bits, encode_batch(bits[None], cfg)[0])


@njit(cache=True)
def _max_star(a, b):
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _lse4(a, b, c, d):
    m = max(max(a, b), max(c, d))
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m) + np.exp(d - m))


@njit(cache=True)
def _log_map(ls, lp, la, nxt, par, term):
    """Log-MAP (BCJR) over a terminated 4-state trellis.

    ``ls``/``lp`` cover K info steps plus the tail; ``la`` holds a-priori
    LLRs for the K info steps.  Returns a-posteriori LLRs for the info bits.
    """
    neg = -1e30
    steps = ls.size
    k = la.size
    # every state has exactly two incoming branches
    prev_s = np.empty((NUM_STATES, 2), dtype=np.int64)
    prev_u = np.empty((NUM_STATES, 2), dtype=np.int64)
    fill = np.zeros(NUM_STATES, dtype=np.int64)
    for s in range(NUM_STATES):
        for u in range(2):
            ns = nxt[s, u]
            prev_s[ns, fill[ns]] = s
            prev_u[ns, fill[ns]] = u
            fill[ns] += 1
    alpha = np.full((steps + 1, NUM_STATES), neg)
    beta = np.full((steps + 1, NUM_STATES), neg)
    gamma = np.empty((steps, NUM_STATES, 2))
    alpha[0, 0] = 0.0
    beta[steps, 0] = 0.0
    for t in range(steps):
        a_t = la[t] if t < k else 0.0
        for s in range(NUM_STATES):
            for u in range(2):
                if t >= k and u != term[s]:
                    gamma[t, s, u] = neg
                else:
                    gamma[t, s, u] = 0.5 * ((1 - 2 * u) * (ls[t] + a_t) + (1 - 2 * par[s, u]) * lp[t])
    for t in range(steps):
        m = neg
        for ns in range(NUM_STATES):
            s0, u0 = prev_s[ns, 0], prev_u[ns, 0]
            s1, u1 = prev_s[ns, 1], prev_u[ns, 1]
            v = _max_star(alpha[t, s0] + gamma[t, s0, u0], alpha[t, s1] + gamma[t, s1, u1])
            alpha[t + 1, ns] = v
            m = max(m, v)
        for s in range(NUM_STATES):
            alpha[t + 1, s] -= m
    for t in range(steps - 1, -1, -1):
        m = neg
        for s in range(NUM_STATES):
            v = _max_star(gamma[t, s, 0] + beta[t + 1, nxt[s, 0]], gamma[t, s, 1] + beta[t + 1, nxt[s, 1]])
            beta[t, s] = v
            m = max(m, v)
        for s in range(NUM_STATES):
            beta[t, s] -= m
    out = np.empty(k)
    m0 = np.empty(NUM_STATES)
    m1 = np.empty(NUM_STATES)
    for t in range(k):
        for s in range(NUM_STATES):
            m0[s] = alpha[t, s] + gamma[t, s, 0] + beta[t + 1, nxt[s, 0]]
            m1[s] = alpha[t, s] + gamma[t, s, 1] + beta[t + 1, nxt[s, 1]]
        out[t] = _lse4(m0[0], m0[1], m0[2], m0[3]) - _lse4(m1[0], m1[1], m1[2], m1[3])
    return out


@njit(cache=True)
def _turbo_decode(llrs, perm, iterations, nxt, par, term):
    k = perm.size
    body = llrs[: 2 * k]
    tail = llrs[2 * k:]
    ls = body[0::2]
    lpar = body[1::2]
    ls1 = np.empty(k + MEMORY)
    lp1 = np.zeros(k + MEMORY)
    ls2 = np.empty(k + MEMORY)
    lp2 = np.zeros(k + MEMORY)
    for t in range(k):
        ls1[t] = ls[t]
        ls2[t] = ls[perm[t]]
        if t % 2 == 0:
            lp1[t] = lpar[t]
        else:
            lp2[t] = lpar[t]
    for j in range(MEMORY):
        ls1[k + j] = tail[2 * j]
        lp1[k + j] = tail[2 * j + 1]
        ls2[k + j] = tail[2 * MEMORY + 2 * j]
        lp2[k + j] = tail[2 * MEMORY + 2 * j + 1]
    ext2 = np.zeros(k)  # extrinsic from decoder 2, natural order
    app = np.zeros(k)
    for _ in range(iterations):
        app1 = _log_map(ls1, lp1, ext2, nxt, par, term)
        ext1 = app1 - ls1[:k] - ext2
        la2 = ext1[perm]
        app2 = _log_map(ls2, lp2, la2, nxt, par, term)
        ext2_i = app2 - ls2[:k] - la2
        for t in range(k):
            ext2[perm[t]] = ext2_i[t]
            app[perm[t]] = app2[t]
    return app


def decode_llr(llrs, cfg: TurboConfig, perm: np.ndarray | None = None) -> np.ndarray:
    """A-posteriori info-bit LLRs after ``cfg.iterations`` turbo iterations."""
    llrs = np.ascontiguousarray(llrs, dtype=np.float64)
    if llrs.ndim != 1 or llrs.size != cfg.coded_length:
        raise StructureError(f"expected {cfg.coded_length} LLRs, got shape {llrs.shape}")
    if perm is None:
        perm = cfg.interleaver()
    return _turbo_decode(llrs, perm.astype(np.int64), cfg.iterations, NEXT_STATE, PARITY, TERM_INPUT)


def decode(llrs, cfg: TurboConfig, perm: np.ndarray | None = None) -> np.ndarray:
    """Hard info-bit decisions (ties resolve to 0)."""
    return (decode_llr(llrs, cfg, perm) < 0).astype(np.int8)


def decode_batch(llrs: np.ndarray, cfg: TurboConfig) -> np.ndarray:
    perm = cfg.interleaver()
    return np.stack([decode(row, cfg, perm) for row in np.atleast_2d(llrs)])
