"""Error counting, confidence intervals, plug-in mutual information and
Monte Carlo detection rates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr
from statsmodels.stats.proportion import proportion_confint

from .channel import ParameterError, complex_normal
from .dsss import StructureError
from .receiver import detect_attack


def wilson_interval(successes, trials, z: float = 1.959963984540054):
    """Wilson score interval; returns (low, high)."""
    if trials <= 0:
        return 0.0, 1.0
    alpha = 2.0 * float(ndtr(-z))
    low, high = proportion_confint(successes, trials, alpha=alpha, method="wilson")
    # the closed form lands a rounding error away from the boundary
    low = 0.0 if successes == 0 else max(float(low), 0.0)
    high = 1.0 if successes == trials else min(float(high), 1.0)
    return low, high


@dataclass(frozen=True)
class BerRecord:
    scenario_id: str
    snr_db: float
    bit_errors: int
    bits_total: int
    frames: int
    block_errors: int = 0
    blocks: int = 0

    def __post_init__(self):
        if not 0 <= self.bit_errors <= self.bits_total:
            raise ParameterError("bit_errors must lie in [0, bits_total]")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else float("nan")

    def confint(self, z: float = 1.959963984540054):
        return wilson_interval(self.bit_errors, self.bits_total, z)


def ber_accumulate(records: Iterable[BerRecord]) -> BerRecord:
    """Merge records of one (scenario, SNR) point; order does not matter."""
    records = list(records)
    if not records:
        raise StructureError("nothing to accumulate")
    keys = {(r.scenario_id, r.snr_db) for r in records}
    if len(keys) > 1:
        raise StructureError(f"cannot merge different points: {sorted(keys)}")
    scenario_id, snr_db = keys.pop()
    return BerRecord(
        scenario_id,
        snr_db,
        sum(r.bit_errors for r in records),
        sum(r.bits_total for r in records),
        sum(r.frames for r in records),
        sum(r.block_errors for r in records),
        sum(r.blocks for r in records),
    )


# ---------------------------------------------------------- mutual info


@dataclass(frozen=True)
class MiEstimate:
    value_bits: float
    bins: int
    samples: int


def mutual_information_plugin(x, y, bins: int = 16, span: float = 4.0) -> MiEstimate:
    """Histogram (plug-in) estimate of I(x; y) in bits for binary x.

    y is binned on a ``bins`` x ``bins`` grid over its real and imaginary
    parts, each axis spanning +/- ``span`` sample standard deviations around
    the mean; outliers land in the edge bins.  The plug-in estimator is
    biased upwards by roughly (occupied bins - 1) / (2 n ln 2) bits.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=complex)
    n = x.size
    if n < 10_000:
        raise ParameterError("plug-in MI needs at least 10^4 samples")
    if bins < 8:
        raise ParameterError("need at least 8 bins per axis")
    if y.size != n:
        raise StructureError("x and y differ in length")

    def digitize(v):
        mu, sd = v.mean(), v.std()
        if sd == 0:
            return np.zeros(v.size, dtype=np.int64)
        u = (v - mu) / (2 * span * sd) + 0.5
        return np.clip((u * bins).astype(np.int64), 0, bins - 1)

    cell = digitize(y.real) * bins + digitize(y.imag)
    xi = (x > 0).astype(np.int64)
    joint = np.bincount(xi * bins * bins + cell, minlength=2 * bins * bins).reshape(2, -1) / n
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))
    return MiEstimate(max(mi, 0.0), bins, n)


# ------------------------------------------------------- detection rates


@dataclass(frozen=True)
class DetectionScenario:
    """Single secondary finger with fixed gain ``h`` observed over frames."""

    length: int = 100
    num_pilots: int = 20
    flip_prob: float = 0.5
    h: complex = 1.0
    sigma2: float = 0.1
    eps: complex = 0.0
    pilot_aware: bool = False


@dataclass(frozen=True)
class DetectionRates:
    p_miss: float
    p_miss_ci: tuple[float, float]
    miss_trials: int
    p_false: float
    p_false_ci: tuple[float, float]
    false_trials: int


def simulate_pilot_detection(sc: DetectionScenario, trials: int, rng: np.random.Generator,
                             attack: bool):
    """Per-frame detection verdicts and whether Eve flipped any symbol."""
    L, Lp = sc.length, sc.num_pilots
    order = np.argsort(rng.random((trials, L)), axis=1)
    pilot_mask = np.zeros((trials, L), dtype=bool)
    np.put_along_axis(pilot_mask, order[:, :Lp], True, axis=1)
    flips = np.zeros((trials, L), dtype=bool)
    if attack:
        flips = rng.random((trials, L)) < sc.flip_prob
        if sc.pilot_aware:
            flips &= ~pilot_mask
    gain = np.where(flips, -sc.h - 2 * sc.eps, sc.h)
    x = 1 - 2 * rng.integers(0, 2, size=(trials, L))
    y = gain * x + complex_normal(rng, sc.sigma2, size=(trials, L))
    prods = (y * x)[pilot_mask].reshape(trials, Lp, 1)
    report = detect_attack(prods, np.full((trials, 1), sc.h))
    return report.attacked[:, 0], flips.any(axis=1)


def empirical_detection_rates(sc: DetectionScenario, trials: int, rng: np.random.Generator,
                              z: float = 1.959963984540054) -> DetectionRates:
    """Monte Carlo P_miss (given at least one flip) and P_false with Wilson CIs."""
    if trials < 10_000:
        raise ParameterError("need at least 10^4 trials")
    detected, _ = simulate_pilot_detection(sc, trials, rng, attack=False)
    fa = int(detected.sum())
    detected, any_flip = simulate_pilot_detection(sc, trials, rng, attack=True)
    n_att = int(any_flip.sum())
    miss = int((~detected & any_flip).sum())
    return DetectionRates(
        miss / n_att if n_att else float("nan"),
        wilson_interval(miss, n_att, z),
        n_att,
        fa / trials,
        wilson_interval(fa, trials, z),
        trials,
    )
