"""End-to-end acceptance checks; each test records a PASS/FAIL line.

The BER sweeps are the slow part (several minutes in total on one core).
Sweeps are cached per (scenario, settings) so criteria that share a curve
only simulate it once.
"""

import functools
import itertools
import time

import numpy as np
import pytest

from flipattack.channel import PowerDelayProfile, make_streams, sample_taps, snr_db_to_sigma2
from flipattack.cli import main
from flipattack.dsss import chip_level_observations, generate_code, symbol_level_observations
from flipattack.harness import ExperimentConfig, LinkSimulator, ber_table, run_ber_sweep, run_mutual_info
from flipattack.metrics import DetectionScenario, empirical_detection_rates, wilson_interval
from flipattack.receiver import analytic_pfalse, analytic_pmiss, ml_decode_uncoded, sigma2_for_q

SNR_GRID = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]
TWO_TAP = (0.5, 0.5)
FOUR_TAP = (0.4, 0.3, 0.2, 0.1)
MIN_EVENTS = 100
# errors inside one code block share a fading realization, so a point also
# needs enough blocks before its error count means anything
MIN_BLOCKS = 20


@functools.lru_cache(maxsize=None)
def sweep(scenario_id, tap_powers=TWO_TAP, eps_frac=0.0, pilot_aware=True, stop_when_clean=False,
          max_info_bits=1_000_000, grid=tuple(SNR_GRID), delta_th=None):
    """{snr_db: (ber, bit_errors, rows)} for one scenario."""
    cfg = ExperimentConfig(scenario_id=[scenario_id], tap_powers=list(tap_powers), snr_grid_db=list(grid),
                           eps_frac=eps_frac, pilot_aware=pilot_aware, stop_when_clean=stop_when_clean,
                           max_info_bits=max_info_bits, min_errors=MIN_EVENTS, min_blocks=MIN_BLOCKS,
                           delta_th=delta_th, seed=11)
    rows = run_ber_sweep(cfg)
    out = {}
    for snr, r in ber_table(rows)[scenario_id].items():
        extra = {x.metric: x.value for x in rows if x.snr_db == snr}
        out[snr] = (r.value, round(r.value * r.samples), extra)
    return out


def ber_at(curve, snr):
    # a sweep that stopped early on a clean point is error-free beyond it
    return curve[snr][0] if snr in curve else 0.0


def events_at(curve, snr):
    return curve[snr][1] if snr in curve else 0


def fmt(curve):
    return " ".join(f"{s:g}:{curve[s][0]:.2e}" for s in sorted(curve))


# ------------------------------------------------------------------ 1


def test_zero_capacity_under_random_flips(acceptance_report):
    t0 = time.time()
    cfg = ExperimentConfig(snr_grid_db=[0.0, 5.0, 10.0, 15.0], mi_flip_probs=[0.0, 0.5], mi_samples=100_000)
    mi = {(r.scenario_id, r.snr_db): r.value for r in run_mutual_info(cfg)}
    worst_flip = max(v for (sid, _), v in mi.items() if sid == "flip0.5")
    clean = mi[("flip0", 15.0)]
    elapsed = time.time() - t0
    ok = worst_flip < 0.02 and clean > 0.95 and elapsed < 60
    acceptance_report(1, ok, f"max MI(p=0.5)={worst_flip:.4f} bits, MI(p=0, 15 dB)={clean:.4f} bits, "
                             f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 2


def test_error_floor_when_attacked_tap_is_combined(acceptance_report):
    naive = sweep("A-2,C-12")
    main_only = sweep("A-2,C-1", stop_when_clean=True)
    floor = min(ber_at(naive, s) for s in SNR_GRID)
    best = min(ber_at(main_only, s) for s in SNR_GRID)
    ok = all(s in naive for s in SNR_GRID) and floor > 1e-2 and best < 1e-4
    acceptance_report(2, ok, f"min BER A-2,C-12={floor:.3e} (>1e-2); min BER A-2,C-1={best:.3e} (<1e-4)")
    assert ok


# ------------------------------------------------------------------ 3


def test_diversity_ordering_without_attack(acceptance_report):
    checks = []
    for full, powers in (("A-none,C-12", TWO_TAP), ("A-none,C-1234", FOUR_TAP)):
        rich = sweep(full, tap_powers=powers, stop_when_clean=True)
        poor = sweep("A-none,C-1", tap_powers=powers, stop_when_clean=True)
        for s in SNR_GRID:
            if events_at(rich, s) >= MIN_EVENTS and events_at(poor, s) >= MIN_EVENTS:
                checks.append((full, s, ber_at(rich, s) < ber_at(poor, s)))
    ok = bool(checks) and all(c[2] for c in checks)
    bad = [f"{c[0]}@{c[1]:g}" for c in checks if not c[2]]
    acceptance_report(3, ok, f"{len(checks)} comparable points, violations: {bad or 'none'}")
    assert ok


# ------------------------------------------------------------------ 4


def test_detection_analytics_and_monte_carlo(acceptance_report):
    t0 = time.time()
    L, lps, qs = 100, range(1, 21), (1e-3, 1e-2, 1e-1)
    mono = True
    outside = []
    for qi, q in enumerate(qs):
        pf = [analytic_pfalse(lp, q) for lp in lps]
        pm = [analytic_pmiss(L, lp, 0.5, q) for lp in lps]
        mono &= all(b > a for a, b in zip(pf, pf[1:]))
        mono &= all(b <= a + 1e-12 for a, b in zip(pm, pm[1:]))
        sigma2 = sigma2_for_q(q)
        for lp in lps:
            rng = make_streams(4, qi, lp, names=("mc",))["mc"]
            rates = empirical_detection_rates(DetectionScenario(L, lp, 0.5, 1.0, sigma2), 10_000, rng, z=3.0)
            lo, hi = rates.p_false_ci
            if not lo <= analytic_pfalse(lp, q) <= hi:
                outside.append((lp, q))
    elapsed = time.time() - t0
    ok = mono and not outside and elapsed < 300
    acceptance_report(4, ok, f"monotone={mono}, 60 MC points, outside 3-sigma: {outside or 'none'}, "
                             f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 5


def pmiss_enumerated(L, Lp, p, q):
    """Sum over flip patterns and over which flipped pilots noise restores."""
    total = 0.0
    for pattern in itertools.product((0, 1), repeat=L):
        j = sum(pattern)
        if j == 0:
            continue
        weight = p ** j * (1 - p) ** (L - j)
        hit = sum(pattern[:Lp])  # pilots sit on the first Lp slots
        # missed iff every hit pilot reads back unflipped
        total += weight * q ** hit
    return total


def test_pmiss_formula_matches_enumeration(acceptance_report):
    worst = 0.0
    for L in range(1, 7):
        for Lp, p, q in itertools.product(range(L + 1), (0.25, 0.5), (0.0, 0.3, 1.0)):
            worst = max(worst, abs(analytic_pmiss(L, Lp, p, q) - pmiss_enumerated(L, Lp, p, q)))
    ok = worst <= 1e-12
    acceptance_report(5, ok, f"max |analytic - enumeration| = {worst:.2e}")
    assert ok


# ------------------------------------------------------------------ 6


def test_smart_combining_gain(acceptance_report):
    two = dict(eps_frac=1.0, pilot_aware=False, delta_th=0.5)
    smart = sweep("A-2,SC-12", **two)
    main_only = sweep("A-2,C-1", **two)
    naive = sweep("A-2,C-12", **two)
    vs_main = [s for s in SNR_GRID if s >= 8 and events_at(smart, s) >= MIN_EVENTS
               and events_at(main_only, s) >= MIN_EVENTS]
    ok_main = all(ber_at(smart, s) <= ber_at(main_only, s) for s in vs_main)
    ok_naive = all(ber_at(smart, s) < ber_at(naive, s) for s in SNR_GRID)

    four = dict(tap_powers=FOUR_TAP, eps_frac=1.0, pilot_aware=False, delta_th=1.0, stop_when_clean=True)
    grid4 = (0.0, 2.0, 4.0, 6.0)
    gains, vs_c1 = {}, {}
    c1 = sweep("A-none,C-1", grid=grid4, **four)
    for attack in ("234", "4"):
        sc = sweep(f"A-{attack},SC-1234", grid=grid4, **four)
        drop = sweep(f"A-{attack},D-1234", grid=grid4, **four)
        gains[attack] = {s: ber_at(drop, s) / ber_at(sc, s) for s in grid4
                         if events_at(sc, s) >= MIN_EVENTS and events_at(drop, s) >= MIN_EVENTS}
        vs_c1[attack] = {s: ber_at(c1, s) / ber_at(sc, s) for s in grid4 if events_at(sc, s) > 0}
    matched = sorted(set(gains["234"]) & set(gains["4"]))
    ok_four = bool(matched) and all(gains["234"][s] > gains["4"][s] for s in matched)
    ok = ok_main and ok_naive and ok_four
    detail = " ".join(f"{s:g}dB:{gains['234'][s]:.2f}>{gains['4'][s]:.2f}" for s in matched)
    # informational: the same ratio against the main-finger-only receiver
    literal = " ".join(f"{s:g}dB:{vs_c1['234'][s]:.2f}/{vs_c1['4'][s]:.2f}"
                       for s in sorted(set(vs_c1["234"]) & set(vs_c1["4"])))
    acceptance_report(6, ok, f"SC-12<=C-1 at {len(vs_main)} pts: {ok_main}; SC-12<C-12 everywhere: {ok_naive}; "
                             f"4-tap gain over drop A-234 vs A-4 [{detail}]; vs C-1 [{literal}]")
    assert ok


# ------------------------------------------------------------------ 7


def test_smart_degenerates_to_drop_without_estimate_error(acceptance_report):
    common = dict(eps_frac=0.0, pilot_aware=False, grid=(2.0, 6.0, 10.0), max_info_bits=40 * 3968)
    smart = sweep("A-2,SC-12", **common)
    drop = sweep("A-2,D-12", **common)
    same = all(smart[s][:2] == drop[s][:2] for s in smart) and smart.keys() == drop.keys()
    gate = max(smart[s][2]["gate_rate"] for s in smart)
    detect = min(smart[s][2]["detect_rate"] for s in smart)
    ok = same and gate == 0.0
    acceptance_report(7, ok, f"identical BER={same} [{fmt(smart)}], max gate rate={gate}, "
                             f"min detect rate={detect:.3f}")
    assert ok


# ------------------------------------------------------------------ 8


def uncoded_ber(snr_db, chip_level, n_symbols=1_000_000, chunk=20_000, frame=100):
    """Single-tap quasi-static Rayleigh, ML detection with the true gain."""
    sigma2 = float(snr_db_to_sigma2(snr_db))
    pdp = PowerDelayProfile((1.0,))
    code = generate_code(3, 128)
    errors = 0
    for c in range(n_symbols // chunk):
        streams = make_streams(8, int(snr_db), c)
        x = 1 - 2 * streams["bits"].integers(0, 2, (chunk // frame, frame))
        h = sample_taps(pdp, streams["channel"], chunk // frame)[:, None, :]
        if chip_level:
            y = chip_level_observations(x, h, code, sigma2, streams["noise"])
        else:
            y = symbol_level_observations(x, h, sigma2, streams["noise"])
        errors += int(np.count_nonzero(ml_decode_uncoded(y, np.broadcast_to(h, y.shape)) != x))
    return errors, n_symbols


@pytest.mark.parametrize("snr_db", [0.0, 6.0])
def test_chip_and_symbol_models_agree(snr_db, acceptance_report):
    e_sym, n = uncoded_ber(snr_db, chip_level=False)
    e_chip, _ = uncoded_ber(snr_db, chip_level=True)
    lo, hi = wilson_interval(e_sym, n, z=3.0)
    snr = 10 ** (snr_db / 10)
    exact = 0.5 * (1 - np.sqrt(snr / (1 + snr)))
    ok = lo <= e_chip / n <= hi
    acceptance_report(8, ok, f"{snr_db:g} dB: chip {e_chip / n:.5f} in symbol 3-sigma [{lo:.5f}, {hi:.5f}]"
                             f" (closed form {exact:.5f})")
    assert ok


# ------------------------------------------------------------------ 9


def detections(scenario_id, snr_db, pilot_aware, blocks=100):
    cfg = ExperimentConfig(scenario_id=[scenario_id], pilot_aware=pilot_aware, seed=21)
    sim = LinkSimulator(cfg, cfg.scenarios()[0])
    sigma2 = float(snr_db_to_sigma2(snr_db))
    results = [sim.run_block(sigma2, 0, b) for b in range(blocks)]
    return sum(r.frames_flagged for r in results), sum(r.frames for r in results)


def test_detection_soundness(acceptance_report):
    # pilot-aware attack: every detection must also occur without any attack
    induced = {}
    for snr in (0.0, 20.0, 80.0):
        attacked, frames = detections("A-2,D-12", snr, pilot_aware=True)
        baseline, _ = detections("A-none,D-12", snr, pilot_aware=True)
        induced[snr] = (attacked - baseline, attacked, frames)
    silent = all(d == 0 for d, _, _ in induced.values()) and induced[80.0][1] == 0
    rates = empirical_detection_rates(DetectionScenario(100, 20, 0.5, 1.0, float(snr_db_to_sigma2(20.0))),
                                      10_000, make_streams(9, names=("mc",))["mc"])
    caught = 1 - rates.p_miss
    ok = silent and caught > 0.999
    summary = ", ".join(f"{s:g}dB:{a}/{f}" for s, (_, a, f) in induced.items())
    acceptance_report(9, ok, f"pilot-aware flagged frames (all noise-induced={silent}) {summary}; "
                             f"pilot-unaware detection rate at 20 dB = {caught:.5f}")
    assert ok


# ----------------------------------------------------------------- 10


def test_cli_runs_are_byte_identical(tmp_path, acceptance_report):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text('scenario_id: ["A-2,SC-12"]\nsnr_grid_db: [4.0, 8.0]\nmax_info_bits: 20000\n'
                   'eps_frac: 1.0\npilot_aware: false\nlp_grid: [1, 10]\nmi_samples: 10000\n')
    same = {}
    for command in ("ber-sweep", "detect-sweep", "mutual-info", "pmiss-pfalse"):
        outs = []
        for i in range(2):
            out = tmp_path / f"{command}-{i}.csv"
            main([command, "--config", str(cfg), "--seed", "3", "--out", str(out)])
            outs.append(out.read_bytes())
        same[command] = outs[0] == outs[1] and len(outs[0]) > 0
    ok = all(same.values())
    acceptance_report(10, ok, f"byte-identical: {same}")
    assert ok
