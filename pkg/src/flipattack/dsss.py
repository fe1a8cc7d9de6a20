"""Spreading codes, chip-level spreading and per-finger RAKE despreading.

Normalisation: each chip is transmitted with amplitude 1/sqrt(N) and the
despreader divides the correlation by sqrt(N).  A finger with gain h_l and
chip noise CN(0, s2) therefore yields h_l * x_k + CN(0, s2), i.e. the
post-correlation symbol model with the same noise variance.
"""

from __future__ import annotations

import numpy as np

from .channel import ParameterError, complex_normal


class StructureError(ValueError):
    """Array shapes or lengths do not fit together."""


def generate_code(seed: int, n: int) -> np.ndarray:
    """Keyed pseudo-random +/-1 spreading code of length ``n``."""
    if n < 1:
        raise ParameterError("code length must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    return 1 - 2 * rng.integers(0, 2, size=n, dtype=np.int8)


def spread(symbols, code) -> np.ndarray:
    """Chip stream with chip[k*N + i] = symbols[k] * code[i].

    Extra leading axes on ``symbols`` are kept (e.g. frames).
    """
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ParameterError("nothing to spread")
    code = np.asarray(code)
    chips = symbols[..., :, None] * code
    return chips.reshape(*symbols.shape[:-1], -1)


def rake_despread(tap_streams, code, sigma2_chip: float | None = None):
    """Correlate every finger's chip stream with the code.

    ``tap_streams`` has shape (..., L_d, n_chips), one row per finger already
    aligned to that finger's delay.  Returns per-symbol observations of shape
    (..., n_symbols, L_d) and the effective output noise variance (equal to
    ``sigma2_chip`` under the 1/sqrt(N) convention).
    """
    tap_streams = np.asarray(tap_streams)
    code = np.asarray(code, dtype=float)
    n = code.size
    if tap_streams.shape[-1] % n:
        raise StructureError(f"stream length {tap_streams.shape[-1]} is not a multiple of N={n}")
    blocks = tap_streams.reshape(*tap_streams.shape[:-1], -1, n)
    obs = blocks @ code / np.sqrt(n)
    return np.swapaxes(obs, -1, -2), sigma2_chip


def chip_level_observations(symbols, gains, code, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Full chip path: spread, per-finger gain, chip AWGN, RAKE despread.

    ``symbols`` (..., K) in +/-1; ``gains`` broadcastable to (..., K, L_d),
    the per-symbol finger gains after any attack.  Output matches
    ``symbol_level_observations`` in distribution.
    """
    symbols = np.asarray(symbols, dtype=float)
    code = np.asarray(code)
    n = code.size
    clean = np.asarray(gains) * symbols[..., None]
    chips = spread(np.swapaxes(clean, -1, -2), code) / np.sqrt(n)
    chips = chips + complex_normal(rng, sigma2, size=chips.shape)
    obs, _ = rake_despread(chips, code, sigma2)
    return obs


def symbol_level_observations(symbols, gains, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Direct post-correlation model y[k, l] = g[k, l] * x[k] + z[k, l]."""
    symbols = np.asarray(symbols, dtype=float)
    clean = np.asarray(gains) * symbols[..., None]
    return clean + complex_normal(rng, sigma2, size=clean.shape)
