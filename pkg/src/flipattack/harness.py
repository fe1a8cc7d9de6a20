"""Experiment orchestration: scenarios, SNR sweeps and CSV rows.

Scenario ids follow the legend grammar ``A-<taps|none>,<C|SC|D>-<taps>``
with 1-based tap digits: ``A-2,C-12`` means Eve attacks the second finger
and Bob combines fingers one and two.  ``D`` (drop detected fingers) is an
extra receiver kind alongside plain (``C``) and smart (``SC``) combining.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import turbo
from .attacker import AttackerConfig, apply_attack, plan_flips, sample_estimate_error
from .channel import (ParameterError, PowerDelayProfile, complex_normal, make_streams,
                      sample_taps, snr_db_to_sigma2)
from .dsss import chip_level_observations, generate_code, symbol_level_observations
from .metrics import (BerRecord, DetectionScenario, empirical_detection_rates,
                      mutual_information_plugin, wilson_interval)
from .receiver import (Combining, ReceiverStrategy, analytic_pfalse, analytic_pmiss,
                       data_positions_batch, place_pilots_batch, receive, sigma2_for_q)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scenario_id", "snr_db", "metric", "value", "ci_low", "ci_high", "samples", "seed", "note")


class ConfigError(ValueError):
    """Malformed configuration or scenario id."""


# -------------------------------------------------------------- scenarios


_SCENARIO_RE = re.compile(r"^\s*A-(none|\d+)\s*,\s*(SC|C|D)-(\d+)\s*$")


@dataclass(frozen=True)
class Scenario:
    attacked_taps: frozenset[int]
    kind: Combining
    taps: tuple[int, ...]

    @property
    def id(self) -> str:
        return format_scenario(self)


def _digits(text: str, num_taps: int | None) -> list[int]:
    taps = [int(c) - 1 for c in text]
    if len(set(taps)) != len(taps):
        raise ConfigError(f"repeated tap in {text!r}")
    if any(t < 0 for t in taps):
        raise ConfigError("tap numbers start at 1")
    if num_taps is not None and any(t >= num_taps for t in taps):
        raise ConfigError(f"tap number beyond the {num_taps}-tap channel in {text!r}")
    return taps


def parse_scenario(scenario_id: str, num_taps: int | None = None) -> Scenario:
    m = _SCENARIO_RE.match(scenario_id)
    if not m:
        raise ConfigError(f"malformed scenario id {scenario_id!r}")
    attack, kind, combine = m.groups()
    attacked = frozenset() if attack == "none" else frozenset(_digits(attack, num_taps))
    if 0 in attacked:
        raise ConfigError("the main tap (1) cannot be attacked")
    return Scenario(attacked, Combining(kind), tuple(sorted(_digits(combine, num_taps))))


def format_scenario(sc: Scenario) -> str:
    attack = "".join(str(t + 1) for t in sorted(sc.attacked_taps)) or "none"
    return f"A-{attack},{sc.kind.value}-{''.join(str(t + 1) for t in sc.taps)}"


# ----------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    scenario_id: list[str] = field(default_factory=lambda: ["A-none,C-12"])
    tap_powers: list[float] = field(default_factory=lambda: [0.5, 0.5])
    snr_grid_db: list[float] = field(default_factory=lambda: [float(s) for s in range(15)])
    seed: int = 1
    # BER sweep stop rule, per SNR point
    min_errors: int = 100
    min_info_bits: int = 0
    min_blocks: int = 1
    max_info_bits: int = 10_000_000
    stop_when_clean: bool = False
    # attacker
    flip_prob: float = 0.5
    eps_frac: float = 0.0
    pilot_aware: bool = True
    # receiver
    delta_th: float | None = None
    frame_length: int = 100
    num_pilots: int = 20
    # coding and spreading
    block_length: int = 3968
    iterations: int = 10
    interleaver_seed: int = 0x7F5
    spreading_n: int = 128
    mode: str = "symbol"
    # detection sweep
    lp_grid: list[int] = field(default_factory=lambda: list(range(1, 21)))
    q_grid: list[float] = field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    trials: int = 10_000
    # mutual information
    mi_flip_probs: list[float] = field(default_factory=lambda: [0.0, 0.5])
    mi_samples: int = 100_000
    mi_bins: int = 16

    def __post_init__(self):
        if isinstance(self.scenario_id, str):
            self.scenario_id = [self.scenario_id]
        if self.mode not in ("symbol", "chip"):
            raise ConfigError("mode must be 'symbol' or 'chip'")
        if self.max_info_bits <= 0 or self.trials <= 0 or self.mi_samples <= 0:
            raise ConfigError("budgets must be positive")
        try:
            self.pdp
            self.turbo
        except (ParameterError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def pdp(self) -> PowerDelayProfile:
        return PowerDelayProfile(tuple(self.tap_powers))

    @property
    def turbo(self) -> turbo.TurboConfig:
        return turbo.TurboConfig(self.block_length, self.iterations, self.interleaver_seed)

    @property
    def threshold(self) -> float:
        if self.delta_th is not None:
            return float(self.delta_th)
        return 0.5 if len(self.tap_powers) <= 2 else 1.0

    def scenarios(self) -> list[Scenario]:
        return [parse_scenario(s, len(self.tap_powers)) for s in self.scenario_id]

    def attacker(self, sc: Scenario) -> AttackerConfig:
        return AttackerConfig(sc.attacked_taps, self.flip_prob, self.eps_frac, self.pilot_aware)

    def strategy(self, sc: Scenario) -> ReceiverStrategy:
        return ReceiverStrategy(sc.kind, sc.taps, self.threshold)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a flat key: value mapping")
        return cls.from_mapping(data)


@dataclass(frozen=True)
class ResultRow:
    scenario_id: str
    snr_db: float
    metric: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None
    samples: int = 0
    seed: int = 0
    note: str = ""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(rows: Iterable[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


# ---------------------------------------------------------------- BER sweep


@dataclass
class BlockResult:
    bit_errors: int
    frames: int
    frames_flagged: int
    frames_gated: int


class LinkSimulator:
    """One scenario's transmit/attack/receive/decode chain for code blocks."""

    def __init__(self, cfg: ExperimentConfig, sc: Scenario):
        self.cfg = cfg
        self.sc = sc
        self.pdp = cfg.pdp
        self.turbo_cfg = cfg.turbo
        self.perm = self.turbo_cfg.interleaver()
        self.attacker = cfg.attacker(sc)
        self.strategy = cfg.strategy(sc)
        self.attacker.tap_mask(self.pdp.num_taps)
        self.n_data = cfg.frame_length - cfg.num_pilots
        if self.n_data < 1:
            raise ConfigError("frames need at least one data symbol")
        self.frames_per_block = math.ceil(self.turbo_cfg.coded_length / self.n_data)
        self.pilot_key = int(make_streams(cfg.seed, names=("pilots",))["pilots"].integers(2 ** 63))
        self.code = generate_code(cfg.seed, cfg.spreading_n) if cfg.mode == "chip" else None

    def frame_symbols(self, coded: np.ndarray, pilots: np.ndarray, pilot_values: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
        """Pack coded bits (in order) onto the data positions of consecutive frames."""
        n_frames = pilots.shape[0]
        n_pad = n_frames * self.n_data - coded.size
        symbols = np.concatenate([1 - 2 * coded.astype(np.int8),
                                  1 - 2 * rng.integers(0, 2, n_pad, dtype=np.int8)])
        x = np.empty((n_frames, self.cfg.frame_length), dtype=np.int8)
        np.put_along_axis(x, pilots, pilot_values, axis=1)
        np.put_along_axis(x, data_positions_batch(pilots, self.cfg.frame_length),
                          symbols.reshape(n_frames, self.n_data), axis=1)
        return x

    def run_block(self, sigma2: float, snr_index: int, block_index: int) -> BlockResult:
        cfg = self.cfg
        streams = make_streams(cfg.seed, snr_index, block_index)
        k = self.turbo_cfg.block_length
        bits = streams["bits"].integers(0, 2, k, dtype=np.int8)
        coded = turbo.encode_batch(bits[None], self.turbo_cfg)[0]
        f = self.frames_per_block
        frame_ids = block_index * f + np.arange(f)
        pilots, pilot_values = place_pilots_batch(self.pilot_key, frame_ids, cfg.frame_length, cfg.num_pilots)
        x = self.frame_symbols(coded, pilots, pilot_values, streams["bits"])
        pilot_mask = np.zeros(x.shape, dtype=bool)
        np.put_along_axis(pilot_mask, pilots, True, axis=1)

        taps = sample_taps(self.pdp, streams["channel"], f)
        flips = plan_flips(pilot_mask, self.pdp.num_taps, self.attacker, streams["attacker"])
        eps = sample_estimate_error(taps, self.attacker.estimate_error_fraction, streams["attacker"])
        gains = apply_attack(taps, flips, eps)
        if self.code is None:
            y = symbol_level_observations(x, gains, sigma2, streams["noise"])
        else:
            y = chip_level_observations(x, gains, self.code, sigma2, streams["noise"])

        out = receive(y, x, pilots, taps, sigma2, self.strategy)
        llr = out.llr.reshape(-1)[: self.turbo_cfg.coded_length]
        decoded = turbo.decode(llr, self.turbo_cfg, self.perm)
        secondary = out.attacked[:, 1:]
        return BlockResult(
            int(np.count_nonzero(decoded != bits)),
            f,
            int(secondary.any(axis=1).sum()),
            int(out.gate_passed[:, 1:].any(axis=1).sum()),
        )


def simulate_point(sim: LinkSimulator, snr_db: float, snr_index: int) -> tuple[BerRecord, dict]:
    cfg = sim.cfg
    k = sim.turbo_cfg.block_length
    if cfg.max_info_bits < k:
        raise ParameterError(f"budget of {cfg.max_info_bits} info bits is below one code block ({k})")
    sigma2 = float(snr_db_to_sigma2(snr_db))
    errors = bits = frames = blocks = block_errors = flagged = gated = 0
    while True:
        res = sim.run_block(sigma2, snr_index, blocks)
        blocks += 1
        bits += k
        errors += res.bit_errors
        block_errors += res.bit_errors > 0
        frames += res.frames
        flagged += res.frames_flagged
        gated += res.frames_gated
        if bits + k > cfg.max_info_bits:
            break
        if errors >= cfg.min_errors and bits >= cfg.min_info_bits and blocks >= cfg.min_blocks:
            break
    rec = BerRecord(sim.sc.id, float(snr_db), errors, bits, frames, block_errors, blocks)
    return rec, {"flagged": flagged, "gated": gated}


def run_ber_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Coded BER per scenario and SNR point."""
    rows = []
    for sc in cfg.scenarios():
        sim = LinkSimulator(cfg, sc)
        for i, snr in enumerate(cfg.snr_grid_db):
            rec, extra = simulate_point(sim, snr, i)
            note = "" if rec.bit_errors >= cfg.min_errors else f"budget exhausted with {rec.bit_errors} error events"
            log.info("%s %5.1f dB  BER %.3e (%d/%d)", sc.id, snr, rec.ber, rec.bit_errors, rec.bits_total)
            lo, hi = rec.confint()
            rows.append(ResultRow(sc.id, float(snr), "ber", rec.ber, lo, hi, rec.bits_total, cfg.seed, note))
            lo, hi = wilson_interval(rec.block_errors, rec.blocks)
            rows.append(ResultRow(sc.id, float(snr), "bler", rec.block_errors / rec.blocks, lo, hi,
                                  rec.blocks, cfg.seed, note))
            if sc.kind is not Combining.COMBINE:
                for metric, count in (("detect_rate", extra["flagged"]), ("gate_rate", extra["gated"])):
                    lo, hi = wilson_interval(count, rec.frames)
                    rows.append(ResultRow(sc.id, float(snr), metric, count / rec.frames, lo, hi,
                                          rec.frames, cfg.seed, note))
            if cfg.stop_when_clean and rec.bit_errors == 0:
                break
    return rows


def ber_table(rows: Sequence[ResultRow]) -> dict[str, dict[float, ResultRow]]:
    """Index ``ber`` rows as table[scenario_id][snr_db]."""
    table: dict[str, dict[float, ResultRow]] = {}
    for r in rows:
        if r.metric == "ber":
            table.setdefault(r.scenario_id, {})[r.snr_db] = r
    return table


# ------------------------------------------------------- detection sweeps


def _detection_id(L: int, Lp: int, q: float) -> str:
    return f"L{L},Lp{Lp},q{q:g}"


def run_pmiss_pfalse(cfg: ExperimentConfig) -> list[ResultRow]:
    """Analytic misdetection and false-alarm probabilities only."""
    rows = []
    L = cfg.frame_length
    for q in cfg.q_grid:
        snr_db = float(10 * np.log10(1.0 / sigma2_for_q(q)))
        for Lp in cfg.lp_grid:
            sid = _detection_id(L, Lp, q)
            rows.append(ResultRow(sid, snr_db, "pmiss_analytic", analytic_pmiss(L, Lp, cfg.flip_prob, q),
                                  seed=cfg.seed))
            rows.append(ResultRow(sid, snr_db, "pfalse_analytic", float(analytic_pfalse(Lp, q)),
                                  seed=cfg.seed))
    return rows


def run_detection_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Analytic and Monte Carlo P_miss / P_false over the (L_p, q) grid.

    The finger has unit gain and the noise variance is chosen so that the
    polarity reversal probability equals q.
    """
    rows = []
    L = cfg.frame_length
    for qi, q in enumerate(cfg.q_grid):
        sigma2 = sigma2_for_q(q)
        snr_db = float(10 * np.log10(1.0 / sigma2))
        for li, Lp in enumerate(cfg.lp_grid):
            sid = _detection_id(L, Lp, q)
            rng = make_streams(cfg.seed, qi, li, names=("detection",))["detection"]
            sc = DetectionScenario(L, Lp, cfg.flip_prob, 1.0, sigma2, 0.0, False)
            mc = empirical_detection_rates(sc, cfg.trials, rng)
            rows += [
                ResultRow(sid, snr_db, "pmiss_analytic", analytic_pmiss(L, Lp, cfg.flip_prob, q), seed=cfg.seed),
                ResultRow(sid, snr_db, "pfalse_analytic", float(analytic_pfalse(Lp, q)), seed=cfg.seed),
                ResultRow(sid, snr_db, "pmiss_mc", mc.p_miss, *mc.p_miss_ci, mc.miss_trials, cfg.seed),
                ResultRow(sid, snr_db, "pfalse_mc", mc.p_false, *mc.p_false_ci, mc.false_trials, cfg.seed),
            ]
    return rows


# ------------------------------------------------------ mutual information


def flip_channel_samples(n: int, flip_prob: float, sigma2: float, rng: np.random.Generator,
                         h: complex = 1.0, power: float = 1.0):
    """(x, y) pairs through the flat channel with Eve flipping at ``flip_prob``."""
    x = 1 - 2 * rng.integers(0, 2, n)
    flipped = rng.random(n) < flip_prob
    y = np.where(flipped, -1.0, 1.0) * np.sqrt(power) * h * x + complex_normal(rng, sigma2, size=n)
    return x, y


def run_mutual_info(cfg: ExperimentConfig) -> list[ResultRow]:
    rows = []
    for pi, p in enumerate(cfg.mi_flip_probs):
        for si, snr in enumerate(cfg.snr_grid_db):
            rng = make_streams(cfg.seed, pi, si, names=("mi",))["mi"]
            x, y = flip_channel_samples(cfg.mi_samples, p, float(snr_db_to_sigma2(snr)), rng)
            est = mutual_information_plugin(x, y, cfg.mi_bins)
            rows.append(ResultRow(f"flip{p:g}", float(snr), "mi_bits", est.value_bits,
                                  samples=est.samples, seed=cfg.seed))
    return rows


RUNNERS = {
    "ber-sweep": run_ber_sweep,
    "detect-sweep": run_detection_sweep,
    "mutual-info": run_mutual_info,
    "pmiss-pfalse": run_pmiss_pfalse,
}
