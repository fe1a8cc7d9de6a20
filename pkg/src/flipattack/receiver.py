"""Bob's receiver: pilots, channel estimates, attack detection and combining.

Array conventions (vectorised over frames):

* ``y``      (F, L, L_d) complex finger outputs for every symbol of every frame
* ``pilots`` (F, L_p) sorted pilot positions, ``x`` (F, L) transmitted symbols
* ``taps``   (F, L_d) complex channel gains

Polarity of a pilot is judged coherently: the product y * x is projected on
Bob's reference for that finger, and a negative real part means "flipped".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr, ndtri, xlog1py, xlogy

from .channel import ParameterError
from .dsss import StructureError

DEFAULT_FRAME_LENGTH = 100
DEFAULT_NUM_PILOTS = 20


# ---------------------------------------------------------------- frames


@dataclass(frozen=True)
class Frame:
    length: int
    pilot_positions: np.ndarray
    pilot_values: np.ndarray

    @property
    def num_pilots(self) -> int:
        return self.pilot_positions.size

    @property
    def data_positions(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.length), self.pilot_positions)

    @property
    def pilot_mask(self) -> np.ndarray:
        mask = np.zeros(self.length, dtype=bool)
        mask[self.pilot_positions] = True
        return mask


def place_pilots(key: int, frame_index: int, length: int = DEFAULT_FRAME_LENGTH,
                 num_pilots: int = DEFAULT_NUM_PILOTS) -> Frame:
    """Keyed pseudo-random pilot positions and values for one frame."""
    if not 0 <= num_pilots <= length:
        raise ParameterError("need 0 <= L_p <= L")
    rng = np.random.default_rng(np.random.SeedSequence([int(key), int(frame_index)]))
    positions = np.sort(rng.choice(length, size=num_pilots, replace=False))
    values = 1 - 2 * rng.integers(0, 2, size=num_pilots, dtype=np.int8)
    return Frame(length, positions, values)


def place_pilots_batch(key: int, frame_indices, length: int = DEFAULT_FRAME_LENGTH,
                       num_pilots: int = DEFAULT_NUM_PILOTS):
    """Stacked positions (F, L_p) and values (F, L_p) for several frames."""
    frames = [place_pilots(key, i, length, num_pilots) for i in frame_indices]
    return (np.stack([f.pilot_positions for f in frames]),
            np.stack([f.pilot_values for f in frames]))


def data_positions_batch(pilots: np.ndarray, length: int) -> np.ndarray:
    """Sorted data positions (F, L - L_p) complementing ``pilots``."""
    mask = np.ones((pilots.shape[0], length), dtype=bool)
    np.put_along_axis(mask, pilots, False, axis=1)
    return np.nonzero(mask)[1].reshape(pilots.shape[0], -1)


def pilot_products(y: np.ndarray, x: np.ndarray, pilots: np.ndarray) -> np.ndarray:
    """y * x at the pilot positions, shape (F, L_p, L_d).

    Unflipped pilots cluster at h_l, flipped ones at -(h_l + 2 eps_l),
    whatever the pilot's own polarity.
    """
    yp = np.take_along_axis(y, pilots[..., None], axis=1)
    xp = np.take_along_axis(x, pilots, axis=1)
    return yp * xp[..., None]


# ------------------------------------------------------------ estimation


def estimate_channel(y, x) -> np.ndarray:
    """Least-squares tap estimate mean(y * x) over the pilot axis (-1)."""
    y = np.asarray(y)
    if y.shape[-1] == 0:
        raise StructureError("need at least one pilot observation")
    return np.mean(y * np.asarray(x), axis=-1)


@dataclass(frozen=True)
class DetectionReport:
    """Per-finger verdicts: ``flipped`` (..., L_p, L_d), ``attacked`` (..., L_d)."""

    flipped: np.ndarray

    @property
    def attacked(self) -> np.ndarray:
        return self.flipped.any(axis=-2)

    def flipped_pilot_positions(self, pilots: np.ndarray, tap: int) -> set[int]:
        """Positions flagged on one finger of a single frame."""
        return set(np.asarray(pilots)[self.flipped[..., tap]].tolist())


def detect_attack(products: np.ndarray, h_ref: np.ndarray) -> DetectionReport:
    """Flag pilots whose coherent polarity disagrees with the known pilot.

    ``products`` are pilot products y * x of shape (..., L_p, L_d) and
    ``h_ref`` (..., L_d) is Bob's reference gain per finger.
    """
    proj = np.real(products * np.conj(np.asarray(h_ref))[..., None, :])
    return DetectionReport(proj < 0)


@dataclass(frozen=True)
class TapStatistics:
    """Cluster centres estimated from the pilots, per frame and finger.

    ``h_hat`` estimates h from pilots judged unflipped, ``h_attack_hat``
    estimates h + 2 eps from pilots judged flipped (NaN when there are none).
    """

    h_hat: np.ndarray
    h_attack_hat: np.ndarray
    gate_passed: np.ndarray
    n_unflipped: np.ndarray
    n_flipped: np.ndarray


def estimate_attack_statistics(products: np.ndarray, detection: DetectionReport, sigma: float) -> TapStatistics:
    flipped = detection.flipped
    n_f = flipped.sum(axis=-2)
    n_u = (~flipped).sum(axis=-2)
    with np.errstate(invalid="ignore", divide="ignore"):
        h_hat = np.where(~flipped, products, 0).sum(axis=-2) / n_u
        h_att = -np.where(flipped, products, 0).sum(axis=-2) / n_f
    h_hat = np.where(n_u > 0, h_hat, np.nan)
    h_att = np.where(n_f > 0, h_att, np.nan)
    with np.errstate(invalid="ignore"):
        gate = (n_f > 0) & (n_u > 0) & (np.abs(h_att - h_hat) > 2.0 * sigma)
    return TapStatistics(h_hat, h_att, gate, n_u, n_f)


# ------------------------------------------------------------- analytics


def analytic_q(h, sigma2):
    """Probability that coherent detection reverses a pilot's polarity.

    q = Q(|h| sqrt(2 / sigma^2)); |h| = 0 gives 1/2.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ParameterError("sigma2 must be positive")
    return ndtr(-np.abs(h) * np.sqrt(2.0 / sigma2))


def sigma2_for_q(q: float, h_abs: float = 1.0) -> float:
    """Noise variance at which ``analytic_q`` equals ``q`` for gain |h|."""
    if not 0 < q < 0.5:
        raise ParameterError("q must lie in (0, 0.5)")
    return 2.0 * h_abs ** 2 / ndtri(q) ** 2


def _log_comb(n, r):
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    valid = (r >= 0) & (r <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(np.where(valid, r, 0) + 1) - gammaln(np.where(valid, n - r, 0) + 1)
    return np.where(valid, out, -np.inf)


def analytic_pmiss(L: int, L_p: int, p: float, q: float) -> float:
    """Per-frame misdetection probability for a coin-tossing attacker.

    Sum over j = 1..L flipped symbols of p^j (1-p)^(L-j) times
    sum_x C(L_p, x) C(L - L_p, j - x) q^x, evaluated in the log domain.
    """
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise ParameterError("p and q must lie in [0, 1]")
    if not 0 <= L_p <= L or L < 1:
        raise ParameterError("need 1 <= L and 0 <= L_p <= L")
    j = np.arange(1, L + 1)[:, None]
    x = np.arange(0, L_p + 1)[None, :]
    log_terms = (xlogy(j, p) + xlogy(L - j, 1 - p)
                 + _log_comb(L_p, x) + _log_comb(L - L_p, j - x) + xlogy(x, q))
    log_terms = np.where(x <= j, log_terms, -np.inf)
    if np.all(np.isneginf(log_terms)):
        return 0.0
    return float(np.exp(logsumexp(log_terms)))


def analytic_pfalse(L_p, q):
    """False-alarm probability 1 - (1 - q)^L_p, accurate for tiny q."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ParameterError("q must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return -np.expm1(xlog1py(L_p, -q))


# -------------------------------------------------------------- combining


class Action(enum.IntEnum):
    DISCARD = 0
    KEEP = 1
    FLIP = 2


def smart_confidence(y, h_hat, h_attack_hat, sigma2: float):
    """Log-ratio of flipped-cluster to unflipped-cluster likelihoods.

    Positive values mean y sits nearer +/-(h + 2 eps) than +/-h.
    """
    y = np.asarray(y)
    a = np.asarray(h_attack_hat)
    h = np.asarray(h_hat)
    num = np.logaddexp(-np.abs(y - a) ** 2 / sigma2, -np.abs(y + a) ** 2 / sigma2)
    den = np.logaddexp(-np.abs(y - h) ** 2 / sigma2, -np.abs(y + h) ** 2 / sigma2)
    return num - den


def smart_decide(delta, delta_th: float) -> np.ndarray:
    """Flip when the flipped cluster wins by more than ``delta_th``."""
    if delta_th < 0:
        raise ParameterError("delta_th must be >= 0")
    delta = np.asarray(delta)
    return np.where(delta > delta_th, Action.FLIP,
                    np.where(delta < -delta_th, Action.KEEP, Action.DISCARD)).astype(np.int8)


@dataclass(frozen=True)
class SmartDecision:
    action: np.ndarray
    confidence: np.ndarray


def smart_combine(y, stats: TapStatistics, sigma2: float, delta_th: float) -> SmartDecision:
    """Per-symbol keep/flip/discard decisions on one gated finger.

    ``y`` and the statistics must broadcast; callers handle frames whose gate
    failed (those fingers are dropped instead).
    """
    if not np.all(stats.gate_passed):
        raise ParameterError("smart combining needs a passed offset gate")
    delta = smart_confidence(y, stats.h_hat, stats.h_attack_hat, sigma2)
    return SmartDecision(smart_decide(delta, delta_th), delta)


def symbol_llr(y, weights, sigma2: float, axis: int = -1):
    """Maximal-ratio BPSK LLR, sum over fingers of 4 Re(y conj(w)) / sigma^2.

    Positive favours x = +1 (bit 0).  A finger excluded for a symbol should
    carry weight 0.
    """
    y = np.asarray(y)
    if y.shape[axis] == 0:
        raise StructureError("need at least one finger to combine")
    return np.sum(4.0 * np.real(y * np.conj(weights)), axis=axis) / sigma2


def ml_decode_uncoded(y, h, taps=None) -> np.ndarray:
    """argmin_x sum_l |y_l - h_l x|^2 over the chosen fingers; ties -> +1."""
    y = np.asarray(y)
    h = np.asarray(h)
    if taps is not None:
        taps = list(taps)
        y = y[..., taps]
        h = np.broadcast_to(h, y.shape[:-1] + h.shape[-1:])[..., taps]
    d_plus = np.sum(np.abs(y - h) ** 2, axis=-1)
    d_minus = np.sum(np.abs(y + h) ** 2, axis=-1)
    return np.where(d_minus < d_plus, -1, 1)


# -------------------------------------------------------------- strategy


class Combining(enum.Enum):
    COMBINE = "C"  # attack-ignorant MRC over the listed fingers
    DROP = "D"  # detect, then leave out flagged secondary fingers
    SMART = "SC"  # detect, smart-combine gated fingers, drop the rest


@dataclass(frozen=True)
class ReceiverStrategy:
    kind: Combining
    taps: tuple[int, ...] = (0,)
    delta_th: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(sorted(set(int(t) for t in self.taps))))
        if not self.taps:
            raise ParameterError("strategy needs at least one finger")
        if self.delta_th < 0:
            raise ParameterError("delta_th must be >= 0")


MAIN_TAP_ONLY = ReceiverStrategy(Combining.COMBINE, (0,))


@dataclass
class FrameOutcome:
    """Receiver output for a batch of frames."""

    llr: np.ndarray
    attacked: np.ndarray
    gate_passed: np.ndarray
    actions: np.ndarray | None = field(default=None, repr=False)


def receive(y: np.ndarray, x: np.ndarray, pilots: np.ndarray, h_ref: np.ndarray,
            sigma2: float, strategy: ReceiverStrategy) -> FrameOutcome:
    """Data-symbol LLRs (F, L - L_p) for ``strategy``.

    ``x`` only needs to be correct at pilot positions.  ``h_ref`` is Bob's
    reference gain used for the polarity test.
    """
    n_frames, length, n_taps = y.shape
    if max(strategy.taps) >= n_taps:
        raise ParameterError(f"strategy uses finger {max(strategy.taps)} of a {n_taps}-tap channel")
    data = data_positions_batch(pilots, length)
    yd = np.take_along_axis(y, data[..., None], axis=1)
    prods = pilot_products(y, x, pilots)
    use = np.zeros(n_taps, dtype=bool)
    use[list(strategy.taps)] = True

    if strategy.kind is Combining.COMBINE:
        h_hat = prods.mean(axis=1)
        llr = symbol_llr(yd[..., use], h_hat[:, None, use], sigma2)
        no = np.zeros((n_frames, n_taps), dtype=bool)
        return FrameOutcome(llr, no, no)

    report = detect_attack(prods, h_ref)
    attacked = report.attacked.copy()
    attacked[:, 0] = False  # the main finger is never attacked
    stats = estimate_attack_statistics(prods, report, np.sqrt(sigma2))
    h_all = prods.mean(axis=1)
    weights = np.broadcast_to(np.where(attacked, 0, h_all)[:, None, :], yd.shape).copy()
    actions = None
    gate = stats.gate_passed & attacked
    if strategy.kind is Combining.SMART and gate.any():
        f_idx, l_idx = np.nonzero(gate)
        ys = yd[f_idx, :, l_idx]  # (G, K_data)
        hh = stats.h_hat[f_idx, l_idx][:, None]
        ha = stats.h_attack_hat[f_idx, l_idx][:, None]
        delta = smart_confidence(ys, hh, ha, sigma2)
        act = smart_decide(delta, strategy.delta_th)
        # flipped symbols arrive as -(h + 2 eps) x, so weight them by -(h + 2 eps)
        w = np.where(act == Action.KEEP, hh, np.where(act == Action.FLIP, -ha, 0))
        weights[f_idx, :, l_idx] = w
        actions = np.full(yd.shape, -1, dtype=np.int8)
        actions[f_idx, :, l_idx] = act
    llr = symbol_llr(yd[..., use], weights[..., use], sigma2)
    return FrameOutcome(llr, attacked, gate, actions)
