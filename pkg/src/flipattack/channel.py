"""Fading channels, AWGN and the attacker timing predicate.

All random draws take an explicit ``numpy.random.Generator`` so callers can
freeze any single source (channel, noise, attacker, pilots) independently.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STREAM_NAMES = ("bits", "channel", "noise", "attacker", "pilots")


class ParameterError(ValueError):
    """A numeric argument is outside its admissible domain."""


@dataclass(frozen=True)
class PowerDelayProfile:
    """Average tap powers E{|h_l|^2} and tap delays in symbol periods."""

    tap_powers: tuple[float, ...]
    tap_delays: tuple[int, ...] = field(default=())

    def __post_init__(self):
        powers = tuple(float(p) for p in self.tap_powers)
        delays = tuple(int(d) for d in self.tap_delays) or tuple(range(len(powers)))
        object.__setattr__(self, "tap_powers", powers)
        object.__setattr__(self, "tap_delays", delays)
        if len(powers) < 1:
            raise ParameterError("power-delay profile needs at least one tap")
        if len(delays) != len(powers):
            raise ParameterError("tap_powers and tap_delays differ in length")
        if any(p < 0 for p in powers):
            raise ParameterError("tap powers must be non-negative")
        if abs(sum(powers) - 1.0) > 1e-9:
            raise ParameterError(f"tap powers sum to {sum(powers)!r}, expected 1")
        if delays[0] != 0 or any(b <= a for a, b in zip(delays, delays[1:])):
            raise ParameterError("tap delays must start at 0 and strictly increase")

    @property
    def num_taps(self) -> int:
        return len(self.tap_powers)


TWO_TAP = PowerDelayProfile((0.5, 0.5))
FOUR_TAP = PowerDelayProfile((0.4, 0.3, 0.2, 0.1))


@dataclass(frozen=True)
class ChannelRealization:
    """Complex tap gains, constant over one frame."""

    taps: np.ndarray
    frame_index: int = 0


@dataclass(frozen=True)
class TimingBudget:
    t_main: float
    t_p: float
    t_side: float
    T_s: float
    margin: float = 0.1

    def __post_init__(self):
        for name in ("t_main", "t_p", "t_side", "T_s"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if not 0 < self.margin <= 1:
            raise ParameterError("margin must lie in (0, 1]")


def make_streams(seed: int, *key: int, names: Sequence[str] = STREAM_NAMES) -> dict[str, np.random.Generator]:
    """Independent generators, one per named randomness source.

    ``key`` (e.g. SNR index, block index) is folded into the seed sequence so
    work units can be simulated in any order and still reproduce.
    """
    streams = {}
    for name in names:
        tag = zlib.crc32(name.encode())
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(*map(int, key), tag))
        streams[name] = np.random.default_rng(ss)
    return streams


def complex_normal(rng: np.random.Generator, variance, size=None) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with E|z|^2 = ``variance``."""
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    if size is None:
        size = np.shape(scale)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_taps(pdp: PowerDelayProfile, rng: np.random.Generator, n_frames: int) -> np.ndarray:
    """Draw ``n_frames`` independent tap vectors, shape (n_frames, L_d)."""
    powers = np.asarray(pdp.tap_powers)
    return complex_normal(rng, powers, size=(n_frames, pdp.num_taps))


def sample_realization(pdp: PowerDelayProfile, rng: np.random.Generator, frame_index: int = 0) -> ChannelRealization:
    return ChannelRealization(sample_taps(pdp, rng, 1)[0], frame_index)


def awgn(sigma2: float, rng: np.random.Generator, size=None):
    """Complex AWGN samples with total variance ``sigma2``."""
    if not sigma2 > 0:
        raise ParameterError("noise variance must be positive")
    n = complex_normal(rng, sigma2, size=() if size is None else size)
    return complex(n) if size is None else n


def narrowband_observe(x: int, h: complex, power: float, sigma2: float, flipped: bool,
                       rng: np.random.Generator) -> complex:
    """Received symbol on a flat channel, optionally flipped in the air by Eve."""
    if x not in (-1, 1):
        raise ParameterError("x must be a BPSK symbol (+1 or -1)")
    sign = -1.0 if flipped else 1.0
    noise = awgn(sigma2, rng) if sigma2 > 0 else 0.0
    return sign * np.sqrt(power) * h * x + noise


def timing_feasible(budget: TimingBudget) -> bool:
    """Whether Eve's copy lands inside the symbol Bob is currently resolving.

    The upper bound is ``t_main + margin * T_s``; the margin stands in for
    "much less than one symbol period later".
    """
    arrival = budget.t_p + budget.t_side
    return budget.t_main <= arrival <= budget.t_main + budget.margin * budget.T_s


def snr_db_to_sigma2(snr_db, power: float = 1.0):
    """Noise variance for SNR = power / sigma^2."""
    return power / 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
