"""Eve: tap-selective Bernoulli symbol flipping with perfect or noisy CSI.

Eve is modelled as exact in-air substitution on the attacked fingers: a
flipped symbol arrives as (-h_l - 2 eps_l) x_k instead of h_l x_k, where
eps_l is her channel estimation error.  The Eve-Bob channel is assumed to be
perfectly equalised by her, so it has no runtime representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ParameterError, complex_normal


@dataclass(frozen=True)
class AttackerConfig:
    """Which fingers Eve attacks (0-based, never the main tap) and how."""

    attacked_taps: frozenset[int] = frozenset()
    flip_prob: float = 0.5
    estimate_error_fraction: float = 0.0
    pilot_aware: bool = False

    def __post_init__(self):
        taps = frozenset(int(t) for t in self.attacked_taps)
        object.__setattr__(self, "attacked_taps", taps)
        if 0 in taps:
            raise ParameterError("the main tap (index 0) cannot be attacked")
        if any(t < 0 for t in taps):
            raise ParameterError("tap indices must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ParameterError("flip_prob must lie in [0, 1]")
        if self.estimate_error_fraction < 0:
            raise ParameterError("estimate_error_fraction must be >= 0")

    def tap_mask(self, num_taps: int) -> np.ndarray:
        if self.attacked_taps and max(self.attacked_taps) >= num_taps:
            raise ParameterError(f"attacked tap outside a {num_taps}-tap channel")
        mask = np.zeros(num_taps, dtype=bool)
        mask[list(self.attacked_taps)] = True
        return mask


NO_ATTACK = AttackerConfig()


def plan_flips(pilot_mask: np.ndarray, num_taps: int, cfg: AttackerConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Flip mask b[..., k, l] in {+1, -1}.

    ``pilot_mask`` is a boolean array (..., L) marking pilot positions; it is
    only consulted when Eve knows where the pilots are.  Coins are tossed for
    every (symbol, tap) so the attacker stream is consumed identically
    whatever the configuration.
    """
    pilot_mask = np.asarray(pilot_mask, dtype=bool)
    shape = pilot_mask.shape + (num_taps,)
    coins = rng.random(shape) < cfg.flip_prob
    eligible = np.broadcast_to(cfg.tap_mask(num_taps), shape)
    if cfg.pilot_aware:
        eligible = eligible & ~pilot_mask[..., None]
    return np.where(coins & eligible, -1, 1).astype(np.int8)


def sample_estimate_error(taps: np.ndarray, eps_frac: float, rng: np.random.Generator) -> np.ndarray:
    """Eve's per-frame estimation error, eps_l ~ CN(0, eps_frac^2 |h_l|^2).

    ``taps`` has shape (..., L_d); one error per frame and tap.
    """
    if eps_frac < 0:
        raise ParameterError("eps_frac must be >= 0")
    taps = np.asarray(taps)
    err = complex_normal(rng, np.abs(taps) ** 2, size=taps.shape)
    return eps_frac * err


def apply_attack(taps: np.ndarray, flips: np.ndarray, error: np.ndarray | None = None) -> np.ndarray:
    """Per-symbol finger gains seen by Bob after Eve's substitution.

    ``taps`` (..., L_d), ``flips`` (..., K, L_d), ``error`` like ``taps``.
    Unflipped entries keep h_l; flipped ones become -h_l - 2 eps_l.
    """
    taps = np.asarray(taps)[..., None, :]
    eps = 0.0 if error is None else np.asarray(error)[..., None, :]
    flipped = np.asarray(flips) < 0
    return np.where(flipped, -taps - 2.0 * eps, taps)
