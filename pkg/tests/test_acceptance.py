"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import central_difference, random_unimodal, tre_bruteforce
from tailquant.cli import main
from tailquant.compensation import TREConfig, gate_sweep, tre
from tailquant.config import RunConfig
from tailquant.numerics import RngState
from tailquant.pipeline import run_pipeline, select_calibration
from tailquant.quantizer import BitWidthSpec, quantize_codes
from tailquant.search import search_exhaustive, search_ternary
from tailquant.toynet import (
    ToyNetConfig,
    backward_wrt_activations,
    forward,
    gen_calibration_pool,
    gen_probe,
    init_toynet,
)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return emit


def _setup(seed: int, **overrides):
    cfg = RunConfig(seed=seed, **overrides)
    net = init_toynet(cfg.net_config())
    pool = gen_calibration_pool(net.config, cfg.pool_size, cfg.outlier_fraction,
                                RngState(seed).derive("pool"), cfg.pool_spec())
    return cfg, net, pool


# ---------------------------------------------------------------------------
# 1. ternary / exhaustive equivalence on unimodal arrays
# ---------------------------------------------------------------------------

def test_01_ternary_matches_exhaustive(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(3, 501))
        v = random_unimodal(rng, n)
        f = v.__getitem__
        if search_ternary(f, n).chosen_index != search_exhaustive(f, n).chosen_index:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    verdict(1, "ternary == exhaustive on 1000 unimodal arrays", mismatches == 0 and elapsed < 5.0,
            f"{mismatches} mismatches, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. logarithmic evaluation count
# ---------------------------------------------------------------------------

def _max_evals(n: int, rng) -> int:
    worst = 0
    # every peak position with two curve shapes, plus random unimodal curves
    for peak in range(n):
        for curve in (lambda i: -abs(i - peak), lambda i: -(i - peak) ** 2 + 0.1 * i):
            worst = max(worst, search_ternary(curve, n).n_evals)
    for _ in range(200):
        v = random_unimodal(rng, n)
        worst = max(worst, search_ternary(v.__getitem__, n).n_evals)
    return worst


def test_02_logarithmic_eval_count(verdict):
    rng = np.random.default_rng(7)
    at100 = _max_evals(100, rng)
    exhaustive = search_exhaustive(lambda i: -abs(i - 40), 100).n_evals
    bounds = {n: (_max_evals(n, rng), 2 * math.ceil(math.log(n, 1.5)) + 3) for n in (50, 100, 500, 1000)}
    ok = at100 <= 26 and at100 / exhaustive <= 0.3 and all(e <= b for e, b in bounds.values())
    verdict(2, "ternary evaluations are logarithmic", ok,
            f"N=100: {at100} vs {exhaustive} (ratio {at100 / exhaustive:.2f}); "
            + ", ".join(f"N={n}: {e}<={b}" for n, (e, b) in bounds.items()))


# ---------------------------------------------------------------------------
# 3. fidelity ordering across bit widths
# ---------------------------------------------------------------------------

BIT_LADDER = [(4, 8), (6, 6), (8, 8), (16, 16)]


@pytest.mark.slow
def test_03_fidelity_ordering(verdict):
    ordered, lines, w16 = 0, [], []
    for seed in range(5):
        cfg, net, pool = _setup(seed)
        mse = [run_pipeline(net, pool, replace(cfg, bits_w=bw, bits_a=ba))[1].totals["final_mse_calib"]
               for bw, ba in BIT_LADDER]
        ordered += all(a >= b for a, b in zip(mse, mse[1:]))
        w16.append(mse[-1])
        lines.append("/".join(f"{m:.2g}" for m in mse))
    ok = ordered >= 3 and max(w16) < 1e-4
    verdict(3, "MSE(W4A8) >= MSE(W6A6) >= MSE(W8A8) >= MSE(W16A16)", ok,
            f"ordered in {ordered}/5 seeds, max W16A16 {max(w16):.2e}; per seed {lines}")


# ---------------------------------------------------------------------------
# 4. compensation never hurts on calibration data
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_04_compensation_never_hurts(verdict):
    worst, checked = -math.inf, 0
    for seed in range(5):
        for bw, ba in [(4, 8), (6, 6)]:
            cfg, net, pool = _setup(seed, bits_w=bw, bits_a=ba, rank=64, ridge_lambda=0.0, tau=0.0)
            _, rep = run_pipeline(net, pool, cfg)
            for m in rep.modules:
                worst = max(worst, m.calib_mse_compensated - m.calib_mse_uncompensated)
                checked += 1
    verdict(4, "compensated calibration MSE <= uncompensated", worst <= 1e-10,
            f"{checked} modules, worst difference {worst:.3e}")


# ---------------------------------------------------------------------------
# 5. TRE gating monotonicity
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_05_gating_monotone(verdict):
    cfg, net, pool = _setup(0, bits_w=4, bits_a=8, fit_always=True)
    _, rep = run_pipeline(net, pool, cfg)
    rows = gate_sweep([m.tre for m in rep.modules], [0, 0.005, 0.007, 0.01, 0.02, math.inf],
                      [(m.d_in, m.d_out, m.adapter_rank) for m in rep.modules])
    counts = [r["active"] for r in rows]
    nbytes = [r["bytes"] for r in rows]
    ok = all(a >= b for a, b in zip(counts, counts[1:])) and all(a >= b for a, b in zip(nbytes, nbytes[1:]))
    ok = ok and counts[-1] == 0
    verdict(5, "active adapters and bytes non-increasing in tau", ok, f"counts {counts}, bytes {nbytes}")


# ---------------------------------------------------------------------------
# 6. calibration selection robustness
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_06_selection_robustness(verdict):
    clean, var_sel, var_rand = 0, [], []
    for seed in range(10):
        cfg, net, pool = _setup(seed)
        assert len(pool.planted_ids) == 5
        clean += not (set(select_calibration(pool, cfg).selected_ids) & pool.planted_ids)
        probe = gen_probe(net.config, cfg.probe_size, RngState(seed).derive("probe"))
        a, b = [], []
        for s in range(10):
            sel = select_calibration(pool, replace(cfg, seed=1000 + s))
            a.append(run_pipeline(net, pool, cfg, selection=sel, probe=probe)[1].totals["final_mse_probe"])
            ids = list(np.random.default_rng(s).choice(pool.ids(), cfg.n_target, replace=False))
            b.append(run_pipeline(net, pool, cfg, selection=ids, probe=probe)[1].totals["final_mse_probe"])
        var_sel.append(float(np.var(a)))
        var_rand.append(float(np.var(b)))
    wins = sum(s < r for s, r in zip(var_sel, var_rand))
    ok = clean >= 9 and np.mean(var_sel) < np.mean(var_rand) and wins >= 9
    verdict(6, "selection avoids outliers and reduces variance", ok,
            f"0 planted selected in {clean}/10 pools; mean variance {np.mean(var_sel):.3e} (selected) "
            f"vs {np.mean(var_rand):.3e} (random), smaller in {wins}/10 pools")


# ---------------------------------------------------------------------------
# 7. TRE against brute force
# ---------------------------------------------------------------------------

def test_07_tre_bruteforce(verdict):
    rng = np.random.default_rng(77)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(1, 400))
        if i % 3 == 0:
            y = rng.integers(-3, 4, size=n).astype(float)  # many magnitude ties
        else:
            y = rng.standard_t(3, size=n)
        yq = y + rng.normal(scale=0.1, size=n) * (rng.random(n) < 0.7)
        rho = float(rng.choice([0.01, 0.05, 0.1, 0.5, 1.0]))
        got, want = tre(y, yq, TREConfig(rho=rho)), tre_bruteforce(y, yq, rho)
        worst = max(worst, abs(got - want) / max(abs(want), 1.0))
    verdict(7, "tre matches brute force on 1000 tensors", worst <= 1e-12, f"worst error {worst:.2e}")


# ---------------------------------------------------------------------------
# 8. gradient check
# ---------------------------------------------------------------------------

def test_08_gradient_check(verdict):
    worst, where = 0.0, ""
    names = ["input", "blocks.0.attn.qkv", "blocks.0.attn.probs", "blocks.0.mlp.fc1", "blocks.0.mlp.act"]
    for seed in range(20):
        depth = 1 + seed % 2
        net = init_toynet(ToyNetConfig(depth=depth, d_model=8, n_heads=2, d_ff=16, seq_len=4,
                                       outlier_channels=1, seed=seed))
        x = gen_probe(net.config, 1, RngState(seed))
        grads = backward_wrt_activations(net, x)
        base = forward(net, x, taps=True).taps
        for name in names + (["blocks.1.attn.ln", "blocks.1.mlp.in"] if depth == 2 else []):
            def loss(e, name=name):
                return 0.5 * float(np.sum(forward(net, x, perturb={name: e - base[name]}).output ** 2))
            fd = central_difference(loss, base[name], 1e-4)
            rel = float(np.linalg.norm(fd - grads[name]) / max(np.linalg.norm(fd), 1e-30))
            if rel > worst:
                worst, where = rel, f"seed {seed} {name}"
    verdict(8, "analytic gradients match central differences", worst <= 1e-4,
            f"worst relative error {worst:.2e} ({where})")


# ---------------------------------------------------------------------------
# 9. quantizer unit bounds
# ---------------------------------------------------------------------------

def test_09_quantizer_bounds(verdict):
    rng = np.random.default_rng(99)
    bad_idem = bad_err = bad_grid = in_range = 0
    for _ in range(10_000):
        bw = BitWidthSpec(int(rng.integers(2, 17)), bool(rng.random() < 0.8))
        delta = float(10 ** rng.uniform(-4, 2))
        x = float(rng.uniform(-1.5, 1.5) * delta * max(abs(bw.q_min), bw.q_max))
        codes = quantize_codes(np.array([x]), delta, bw)
        q = codes * delta
        k = codes[0]
        bad_grid += not (k == int(k) and bw.q_min <= k <= bw.q_max)
        bad_idem += not np.array_equal(quantize_codes(q, delta, bw) * delta, q)
        if bw.q_min * delta <= x <= bw.q_max * delta:
            in_range += 1
            bad_err += not abs(x - q[0]) <= delta / 2
    ok = bad_idem == 0 and bad_err == 0 and bad_grid == 0
    verdict(9, "quantizer idempotence, error bound and grid membership", ok,
            f"idempotence {bad_idem}, error bound {bad_err} of {in_range} in range, grid {bad_grid} violations")


# ---------------------------------------------------------------------------
# 10. reproducibility of the quantize command
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_10_reproducible_quantize(verdict, tmp_path):
    assert main(["gen", "--out", str(tmp_path / "w")]) == 0
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["quantize", "--net", str(tmp_path / "w/net"), "--calib", str(tmp_path / "w/pool"),
                     "--out", str(out)]) == 0
        runs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    reports = []
    for r in runs:
        rep = json.loads(r.pop("report.json"))
        rep["totals"].pop("wall_time_s")
        reports.append(rep)
    diff = sorted(k for k in set(runs[0]) | set(runs[1]) if runs[0].get(k) != runs[1].get(k))
    ok = reports[0] == reports[1] and not diff
    verdict(10, "quantize is byte-reproducible", ok,
            f"{len(runs[0])} files compared, differing: {diff or 'none'}, reports equal: {reports[0] == reports[1]}")
