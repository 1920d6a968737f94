"""Command-line entry point: ``tailquant {gen,select,quantize,report,verify}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing, malformed or corrupt inputs, degenerate tensors, infeasible
selection), 3 verification failure.

Run directory written by ``quantize``::

    report.json          PipelineReport with the embedded RunConfig
    net/                 full-precision network bundle (copied)
    calib/               calibration samples actually used, in order
    qnet/                integer weight codes, remaining parameters, adapters
    curves/<label>.csv   index, alpha, similarity for every interval search
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .bundle import TensorBundle, atomic_write, dumps_json, read_bundle, write_bundle
from .calibration import CalibrationPool, CalibrationSample, ClusterConfig, build_calibration_set, stability_scores
from .compensation import Adapter, TREConfig, fit_adapter, gate_sweep, tre, tre_per_sample
from .config import RunConfig
from .errors import BundleError, DegenerateInputError, ParameterError, ShapeError, TailQuantError
from .numerics import RngState
from .pipeline import _regression_data, replay_ternary, run_pipeline, state_from_report
from .quantizer import BitWidthSpec, QuantParams, params_from_dict, quantize_codes
from .search import search_exhaustive
from .toynet import QuantizedNet, ToyNet, ToyNetConfig, forward, gen_calibration_pool, init_toynet, layer_tokens

log = logging.getLogger("tailquant")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
REPORT_TAUS = (0.0, 0.005, 0.007, 0.01, 0.02, math.inf)
WEIGHT_PARAMS = {"qkv": "attn.qkv.weight", "proj": "attn.proj.weight",
                 "fc1": "mlp.fc1.weight", "fc2": "mlp.fc2.weight"}
NET_FIELDS = ("depth", "d_model", "n_heads", "d_ff", "seq_len", "outlier_channels", "outlier_scale")


class UsageError(TailQuantError):
    pass


class DataError(TailQuantError):
    pass


class VerifyFailed(TailQuantError):
    pass


# ---------------------------------------------------------------------------
# Bundle conversions
# ---------------------------------------------------------------------------

def net_to_bundle(net: ToyNet) -> TensorBundle:
    meta = {"kind": "toynet", "net_config": dataclasses.asdict(net.config),
            "outlier_idx": list(net.outlier_idx)}
    return TensorBundle(dict(net.params), meta)


def net_from_bundle(b: TensorBundle) -> ToyNet:
    if b.metadata.get("kind") != "toynet":
        raise BundleError("bundle does not hold a network")
    cfg = ToyNetConfig(**b.metadata["net_config"])
    return ToyNet(cfg, dict(b.tensors), tuple(b.metadata.get("outlier_idx", ())))


def pool_to_bundle(pool: CalibrationPool) -> TensorBundle:
    meta = {"kind": "pool", "ids": pool.ids(), "planted_ids": sorted(pool.planted_ids),
            "meta": pool.meta}
    return TensorBundle({f"samples/{s.id}": s.payload for s in pool.samples}, meta)


def pool_from_bundle(b: TensorBundle) -> CalibrationPool:
    if b.metadata.get("kind") != "pool":
        raise BundleError("bundle does not hold a calibration pool")
    ids = b.metadata["ids"]
    missing = [i for i in ids if f"samples/{i}" not in b]
    if missing:
        raise BundleError(f"pool bundle lacks samples {missing}")
    samples = [CalibrationSample(i, b[f"samples/{i}"]) for i in ids]
    return CalibrationPool(samples, frozenset(b.metadata.get("planted_ids", [])), b.metadata.get("meta", {}))


def _unit_weight_param(unit: str) -> str | None:
    _, i, _, kind = unit.split(".")
    key = WEIGHT_PARAMS.get(kind)
    return f"blocks.{i}.{key}" if key else None


def qnet_to_bundle(net: ToyNet, report: dict, adapters: dict) -> TensorBundle:
    tensors, units = {}, {}
    coded = {}
    for m in report["modules"]:
        for u in m["units"]:
            units[u["name"]] = {"weight": u["weight"], "act": u["act"]}
            wname = _unit_weight_param(u["name"])
            if wname and u["weight"]:
                p = params_from_dict(u["weight"])
                coded[wname] = quantize_codes(net.params[wname], p.delta, p.bitwidth)
    for name, arr in net.params.items():
        if name in coded:
            tensors[f"{name}.codes"] = coded[name]
        else:
            tensors[name] = arr
    ameta = {}
    for mod, a in adapters.items():
        ameta[mod] = {"active": a.active, "rank": a.rank, "tre_at_fit": a.tre_at_fit}
        if a.active:
            tensors[f"adapters/{mod}/u"] = a.u
            tensors[f"adapters/{mod}/v"] = a.v
            tensors[f"adapters/{mod}/b"] = a.b
    meta = {"kind": "qnet", "net_config": dataclasses.asdict(net.config), "units": units,
            "adapters": ameta}
    return TensorBundle(tensors, meta)


def adapters_from_qnet(b: TensorBundle, d_model: int) -> dict:
    out = {}
    for mod, m in b.metadata.get("adapters", {}).items():
        if m["active"]:
            try:
                u, v, bias = (b[f"adapters/{mod}/{k}"] for k in "uvb")
            except KeyError as e:
                raise BundleError(f"active adapter {mod} missing tensor {e}") from None
            out[mod] = Adapter(u, v, bias, int(m["rank"]), True, float(m["tre_at_fit"]))
        else:
            out[mod] = Adapter.inactive(d_model, d_model, int(m["rank"]), float(m["tre_at_fit"]))
    return out


def load_run(run: Path) -> tuple[dict, ToyNet, QuantizedNet, np.ndarray]:
    """Report, full-precision net, quantized net and calibration batch of a run directory."""
    report = _load_json(run / "report.json")
    net = net_from_bundle(_read(run / "net"))
    qb = _read(run / "qnet")
    adapters = adapters_from_qnet(qb, net.config.d_model)
    state = state_from_report(report, adapters)
    cb = _read(run / "calib")
    X = np.stack([cb[f"samples/{i}"] for i in cb.metadata["ids"]])
    return report, net, QuantizedNet(net, state), X


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _read(path: Path) -> TensorBundle:
    if not Path(path).exists():
        raise FileNotFoundError(f"file not found: {path}")
    return read_bundle(path)


def _load_json(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(_existing(path))
    except (TypeError, ParameterError) as e:
        raise UsageError(f"invalid config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from e


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return path


def _parse_bits(s: str) -> tuple[int, int]:
    try:
        w, a = (int(t) for t in s.split(","))
    except ValueError:
        raise UsageError(f"--bits expects W,A (e.g. 4,8), got {s!r}") from None
    return w, a


def _curve_filename(label: str) -> str:
    return label.replace(":", "__").replace("/", "_") + ".csv"


def _curve_csv(trace: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "alpha", "similarity"])
    for i, s in sorted(trace["evaluations"]):
        w.writerow([i, repr(float(trace["candidates"][i])), repr(float(s))])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    net = init_toynet(cfg.net_config())
    pool = gen_calibration_pool(net.config, cfg.pool_size, cfg.outlier_fraction,
                                RngState(cfg.seed).derive("pool"), cfg.pool_spec())
    write_bundle(out / "net", net_to_bundle(net))
    write_bundle(out / "pool", pool_to_bundle(pool))
    atomic_write(out / "config.json", cfg.to_json() + "\n")
    print(f"wrote {out / 'net'} ({len(net.params)} tensors) and {out / 'pool'} ({len(pool)} samples)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------

def cmd_select(args) -> int:
    if args.n <= 0 or args.n % 2:
        raise UsageError(f"--n must be a positive even integer, got {args.n}")
    cfg = _load_config(args.config)
    pool = pool_from_bundle(_read(Path(args.pool)))
    cc = ClusterConfig(transform=cfg.feature_transform, max_iter=cfg.kmeans_max_iter, n_init=cfg.kmeans_n_init)
    seed = cfg.seed if args.seed is None else args.seed
    try:
        sel = build_calibration_set(pool, args.n, RngState(seed).derive("select"), cc)
    except ParameterError as e:
        raise DataError(str(e)) from e
    if args.net:
        model = layer_tokens(net_from_bundle(_read(Path(args.net))))
    else:
        # without a network the payload itself is the only "layer"
        model = lambda payload: [payload]  # noqa: E731
    stab = stability_scores(pool, model, cfg.eps_s)
    doc = sel.to_dict()
    doc["n_target"] = args.n
    doc["seed"] = seed
    doc["planted_selected"] = sorted(set(sel.selected_ids) & pool.planted_ids)
    doc["stability"] = stab.to_dict()
    text = dumps_json(doc)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# quantize
# ---------------------------------------------------------------------------

def build_run_config(args, net: ToyNet) -> RunConfig:
    cfg = _load_config(args.config)
    upd = {f: getattr(net.config, f) for f in NET_FIELDS}
    if args.method:
        upd["method"] = args.method
    if args.bits:
        upd["bits_w"], upd["bits_a"] = _parse_bits(args.bits)
    for flag, key in (("seed", "seed"), ("rho", "rho"), ("tau", "tau"), ("rank", "rank"), ("grid_n", "grid_n")):
        v = getattr(args, flag)
        if v is not None:
            upd[key] = v
    try:
        cfg = dataclasses.replace(cfg, **upd)
        cfg.search_config()
        TREConfig(cfg.rho, cfg.tau, cfg.tre_eps)
        BitWidthSpec(cfg.bits_w)
        BitWidthSpec(cfg.bits_a)
    except ParameterError as e:
        raise UsageError(str(e)) from e
    if cfg.grid_n < 1:
        raise UsageError("--grid-n must be positive")
    if not 1 <= cfg.rank <= net.config.d_model:
        raise UsageError(f"--rank must lie in [1, {net.config.d_model}]")
    return cfg


def cmd_quantize(args) -> int:
    net_path, calib_path = Path(args.net), Path(args.calib)
    net = net_from_bundle(_read(net_path))
    pool = pool_from_bundle(_read(calib_path))
    cfg = build_run_config(args, net)
    selection = None
    if args.selection:
        doc = _load_json(Path(args.selection))
        selection = list(doc["selected_ids"])
        unknown = set(selection) - set(pool.ids())
        if unknown:
            raise DataError(f"selection ids not in pool: {sorted(unknown)}")
    try:
        qnet, report = run_pipeline(net, pool, cfg, selection=selection)
    except (DegenerateInputError, ShapeError, ParameterError) as e:
        raise DataError(str(e)) from e

    out = Path(args.out)
    rep = _json_safe(report.to_dict())
    ids = rep["selection"]["selected_ids"]
    write_bundle(out / "net", net_to_bundle(net))
    write_bundle(out / "calib", TensorBundle({f"samples/{i}": pool.by_id()[i].payload for i in ids},
                                             {"kind": "calib", "ids": ids}))
    write_bundle(out / "qnet", qnet_to_bundle(net, rep, qnet.state.adapters))
    for t in rep["traces"]:
        atomic_write(out / "curves" / _curve_filename(t["label"]), _curve_csv(t))
    atomic_write(out / "report.json", dumps_json(rep))
    tot = report.totals
    print(f"W{cfg.bits_w}A{cfg.bits_a} {cfg.method}: {tot['similarity_evals']} similarity evaluations, "
          f"{tot['active_adapters']} active adapters ({tot['adapter_bytes']} bytes), "
          f"final MSE {tot['final_mse_calib']:.3e} (calib) {tot['final_mse_probe']:.3e} (probe)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _run_summary(run: Path) -> dict:
    rep = _load_json(run / "report.json")
    try:
        cfg, mods, totals = rep["config"], rep["modules"], rep["totals"]
    except KeyError as e:
        raise DataError(f"{run}: report lacks {e}") from None
    sizes = [(m["d_in"], m["d_out"], m["adapter_rank"]) for m in mods]
    taus = sorted(set(REPORT_TAUS) | {float(cfg["tau"])})
    return {
        "run": str(run),
        "bits": f"W{cfg['bits_w']}A{cfg['bits_a']}",
        "method": cfg["method"],
        "tau": float(cfg["tau"]),
        "totals": totals,
        "depth_profile": [{k: m[k] for k in ("name", "accumulated_mse", "probe_accumulated_mse", "tre",
                                               "adapter_active", "adapter_bytes", "evals")} for m in mods],
        "tau_sweep": gate_sweep([m["tre"] for m in mods], taus, sizes),
        "curves": {t["label"]: [[i, t["candidates"][i], s] for i, s in sorted(t["evaluations"])]
                   for t in rep["traces"]},
    }


def _fmt_tau(t: float) -> str:
    return "inf" if math.isinf(t) else f"{t:g}"


def render_md(runs: list) -> str:
    lines = ["# Quantization report", "", "## Totals", "",
             "| run | bits | method | tau | similarity evals | active adapters | adapter bytes | final MSE (calib) | final MSE (probe) |",
             "|---|---|---|---|---|---|---|---|---|"]
    for r in runs:
        t = r["totals"]
        lines.append(f"| {r['run']} | {r['bits']} | {r['method']} | {_fmt_tau(r['tau'])} | {t['similarity_evals']} "
                     f"| {t['active_adapters']} | {t['adapter_bytes']} | {t['final_mse_calib']:.3e} "
                     f"| {t['final_mse_probe']:.3e} |")
    lines += ["", "## Active adapters per tau", "", "| run | tau | active adapters | adapter bytes |", "|---|---|---|---|"]
    for r in runs:
        for row in r["tau_sweep"]:
            lines.append(f"| {r['run']} | {_fmt_tau(row['tau'])} | {row['active']} | {row['bytes']} |")
    for r in runs:
        lines += ["", f"## Depth profile: {r['run']}", "",
                  "| module | accumulated MSE | probe MSE | TRE | adapter | evals |", "|---|---|---|---|---|---|"]
        for m in r["depth_profile"]:
            lines.append(f"| {m['name']} | {m['accumulated_mse']:.3e} | {m['probe_accumulated_mse']:.3e} "
                         f"| {m['tre']:.4g} | {'on' if m['adapter_active'] else 'off'} | {m['evals']} |")
    return "\n".join(lines) + "\n"


def render_csv(runs: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "module", "accumulated_mse", "probe_accumulated_mse", "tre", "adapter_active",
                "adapter_bytes", "evals"])
    for r in runs:
        for m in r["depth_profile"]:
            w.writerow([r["run"], m["name"], repr(m["accumulated_mse"]), repr(m["probe_accumulated_mse"]),
                        repr(m["tre"]), int(m["adapter_active"]), m["adapter_bytes"], m["evals"]])
    return buf.getvalue()


def cmd_report(args) -> int:
    runs = []
    for r in args.run:
        run = Path(r)
        if not run.is_dir():
            raise FileNotFoundError(f"file not found: {run}")
        runs.append(_run_summary(run))
    if args.format == "json":
        text = dumps_json(_json_safe({"runs": runs}))
    elif args.format == "csv":
        text = render_csv(runs)
    else:
        text = render_md(runs)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def check_traces(traces: list, eps_idx: int) -> tuple[list, list]:
    """Re-run the search oracles on recorded landscapes; returns (violations, notes)."""
    bad, notes = [], []
    for t in traces:
        label, chosen = t["label"], int(t["chosen_index"])
        n = len(t["candidates"])
        land = {int(i): float(s) for i, s in t["evaluations"]}
        if t["method"] == "ternary":
            try:
                rep = replay_ternary(t, eps_idx)
            except KeyError as e:
                bad.append(f"{label}: ternary replay needs unrecorded candidate {e}")
                continue
            if rep.chosen_index != chosen:
                bad.append(f"{label}: ternary replay chose {rep.chosen_index}, recorded {chosen}")
            continue
        if len(land) != n:
            bad.append(f"{label}: exhaustive trace has {len(land)} of {n} candidates")
            continue
        exh = search_exhaustive(lambda i: land[i], n).chosen_index
        if exh != chosen:
            bad.append(f"{label}: recorded index {chosen} is not the argmax {exh}")
            continue
        ter = replay_ternary(t, eps_idx).chosen_index
        if ter != exh:
            if t.get("unimodal"):
                bad.append(f"{label}: unimodal landscape but ternary picks {ter} vs argmax {exh}")
            else:
                notes.append(f"{label}: non-unimodal landscape, ternary would pick {ter} vs argmax {exh}")
    return bad, notes


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_compensation(report: dict, net: ToyNet, qnet: QuantizedNet, X, rtol: float = 1e-4) -> list:
    """Recompute TRE, gate decisions and the least-squares adapters from the stored run."""
    cfg = RunConfig.from_dict(report["config"])
    tcfg = cfg.tre_config()
    fp = forward(net, X, taps=True).taps
    q = forward(net, X, state=qnet.state, taps=True).taps
    bad = []
    for m in report["modules"]:
        name = m["name"]
        x_in, y_q, y_t = _regression_data(fp, q, name, cfg.comp_target)
        if cfg.tre_mode == "pooled":
            t = tre(y_t, y_q, tcfg)
        else:
            n = len(X)
            t = tre_per_sample(y_t.reshape(n, -1), y_q.reshape(n, -1), tcfg)
        if not math.isclose(t, m["tre"], rel_tol=1e-9, abs_tol=1e-15):
            bad.append(f"{name}: TRE recomputes to {t:.6g}, recorded {m['tre']:.6g}")
        should = cfg.compensate and t > tcfg.tau
        if should != bool(m["adapter_active"]):
            bad.append(f"{name}: gate says {'on' if should else 'off'}, recorded {m['adapter_active']}")
        stored = qnet.state.adapters.get(name)
        if stored is None or not stored.active:
            if m["adapter_active"]:
                bad.append(f"{name}: recorded active but no adapter stored")
            continue
        ref = fit_adapter(x_in, y_t, y_q, cfg.rank, cfg.ridge_lambda, tcfg, fit_always=True,
                          tre_mode=cfg.tre_mode, n_samples=len(X), store_f32=True)
        e_w, e_b = _rel(stored.weight(), ref.weight()), _rel(stored.b, ref.b)
        if e_w > rtol or e_b > rtol:
            bad.append(f"{name}: adapter is not the least-squares fit (rel. error W {e_w:.2e}, b {e_b:.2e})")
    return bad


def check_weight_codes(report: dict, net: ToyNet, qb: TensorBundle) -> list:
    bad = []
    for m in report["modules"]:
        for u in m["units"]:
            wname = _unit_weight_param(u["name"])
            if not (wname and u["weight"]):
                continue
            p = params_from_dict(u["weight"])
            if not isinstance(p, QuantParams):
                bad.append(f"{u['name']}: weight quantizer must be uniform")
                continue
            codes = quantize_codes(net.params[wname], p.delta, p.bitwidth)
            stored = qb.tensors.get(f"{wname}.codes")
            if stored is None or not np.array_equal(stored, codes):
                bad.append(f"{u['name']}: stored weight codes differ from requantized weights")
    return bad


def cmd_verify(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise FileNotFoundError(f"file not found: {run}")
    report, net, qnet, X = load_run(run)
    cfg = RunConfig.from_dict(report["config"])
    bad, notes = check_traces(report["traces"], cfg.eps_idx)
    bad += check_weight_codes(report, net, _read(run / "qnet"))
    bad += check_compensation(report, net, qnet, X)
    for n in notes:
        print(f"note: {n}")
    for b in bad:
        print(f"FAIL: {b}")
    if bad:
        raise VerifyFailed(f"{len(bad)} check(s) failed")
    print(f"ok: {len(report['traces'])} traces, {len(report['modules'])} modules verified")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tailquant", description="Tail-aware post-training quantization on a toy transformer.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a seeded toy network and calibration pool")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("select", help="build a calibration subset from a pool")
    s.add_argument("--pool", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--net", help="network bundle used for stability scores")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    q = sub.add_parser("quantize", help="calibrate, quantize and compensate a network")
    q.add_argument("--net", required=True)
    q.add_argument("--calib", required=True, help="calibration pool bundle")
    q.add_argument("--selection", help="selection JSON from 'select' (default: select now)")
    q.add_argument("--method", choices=("ternary", "exhaustive"))
    q.add_argument("--bits", help="W,A bit widths, e.g. 4,8")
    q.add_argument("--config")
    q.add_argument("--seed", type=int)
    q.add_argument("--rho", type=float)
    q.add_argument("--tau", type=float)
    q.add_argument("--rank", type=int)
    q.add_argument("--grid-n", dest="grid_n", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    r = sub.add_parser("report", help="render curves, depth profiles and totals")
    r.add_argument("--run", action="append", required=True)
    r.add_argument("--format", choices=("json", "csv", "md"), default="md")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="re-run oracle checks on a run directory")
    v.add_argument("--run", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VerifyFailed as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, BundleError, DegenerateInputError, ShapeError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
