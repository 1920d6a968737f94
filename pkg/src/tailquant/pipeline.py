"""Sequential post-training quantization of a :class:`ToyNet`.

Modules (attention and MLP submodules) are processed in forward order. For
each quantizable unit the calibration inputs are propagated through the
already quantized and compensated prefix, the weight interval and then the
activation interval are searched, and finally a TRE-gated low-rank adapter is
fitted on the submodule output.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationPool, ClusterConfig, SelectionResult, build_calibration_set
from .compensation import Adapter, adapter_param_bytes, apply_adapter, fit_adapter, tre
from .config import RunConfig
from .errors import ShapeError
from .numerics import RngState
from .quantizer import params_from_dict
from .search import QuantUnit, SearchTrace, calibrate_layer, is_strictly_unimodal, search_ternary
from .toynet import (
    UNITS,
    QuantizedNet,
    QuantState,
    ToyNet,
    UnitQuant,
    attend,
    backward_wrt_activations,
    forward,
    gen_probe,
    linear,
    split_heads,
)

log = logging.getLogger(__name__)


@dataclass
class UnitRecord:
    name: str
    weight: dict | None
    act: dict | None
    evals: int

    def to_dict(self) -> dict:
        return {"name": self.name, "weight": self.weight, "act": self.act, "evals": self.evals}


@dataclass
class ModuleRecord:
    name: str
    units: list
    tre: float
    adapter_active: bool
    adapter_bytes: int
    adapter_rank: int
    d_in: int
    d_out: int
    calib_mse_uncompensated: float
    calib_mse_compensated: float
    accumulated_mse: float = float("nan")
    probe_accumulated_mse: float = float("nan")

    @property
    def evals(self) -> int:
        return sum(u.evals for u in self.units)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "accumulated_mse": self.accumulated_mse,
            "probe_accumulated_mse": self.probe_accumulated_mse,
            "tre": self.tre,
            "adapter_active": self.adapter_active,
            "adapter_bytes": self.adapter_bytes,
            "adapter_rank": self.adapter_rank,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "calib_mse_uncompensated": self.calib_mse_uncompensated,
            "calib_mse_compensated": self.calib_mse_compensated,
            "evals": self.evals,
            "units": [u.to_dict() for u in self.units],
        }


@dataclass
class PipelineReport:
    config: dict
    selection: dict
    modules: list
    traces: list
    totals: dict = field(default_factory=dict)

    def module(self, name: str) -> ModuleRecord:
        return next(m for m in self.modules if m.name == name)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "selection": self.selection,
            "modules": [m.to_dict() for m in self.modules],
            "traces": [_trace_dict(t) for t in self.traces],
            "totals": self.totals,
        }


def _trace_dict(t: SearchTrace) -> dict:
    d = t.to_dict()
    values = [s for _, s in sorted(t.evaluations)]
    full = t.candidates is not None and len(values) == len(t.candidates)
    d["unimodal"] = is_strictly_unimodal(values) if full else None
    return d


# ---------------------------------------------------------------------------
# Units
# ---------------------------------------------------------------------------

def build_unit(net: ToyNet, unit: str, taps: dict) -> tuple[QuantUnit, np.ndarray, str]:
    """Return the unit, its calibration input and the tap holding its output.

    ``taps`` come from a forward pass on the quantized prefix, so the unit
    sees the same inputs it will see at inference.
    """
    i, sub, kind = _parse_unit(unit)
    p = f"blocks.{i}"
    if kind == "qkv":
        return (QuantUnit(unit, linear, net.block(i, "attn.qkv.weight")),
                taps[f"{p}.attn.ln"], f"{p}.attn.qkv")
    if kind == "softmax":
        d = net.config.d_model
        v = split_heads(taps[f"{p}.attn.qkv"][..., 2 * d:], net.config.n_heads)
        return (QuantUnit(unit, lambda a, _w: attend(a, v), None, "twin-threshold", act_signed=False),
                taps[f"{p}.attn.probs"], f"{p}.attn.ctx")
    if kind == "proj":
        return (QuantUnit(unit, linear, net.block(i, "attn.proj.weight")),
                taps[f"{p}.attn.ctx"], f"{p}.attn.out")
    if kind == "fc1":
        b = net.block(i, "mlp.fc1.bias")
        return (QuantUnit(unit, lambda a, w: linear(a, w, b), net.block(i, "mlp.fc1.weight")),
                taps[f"{p}.mlp.ln"], f"{p}.mlp.fc1")
    if kind == "fc2":
        b = net.block(i, "mlp.fc2.bias")
        return (QuantUnit(unit, lambda a, w: linear(a, w, b), net.block(i, "mlp.fc2.weight"), "twin-sign"),
                taps[f"{p}.mlp.act"], f"{p}.mlp.out")
    raise KeyError(unit)


def _parse_unit(unit: str) -> tuple[int, str, str]:
    _, i, sub, kind = unit.split(".")
    return int(i), sub, kind


def units_of(sub: str) -> list:
    return [f"{sub}.{u}" for u in UNITS[sub.split(".")[-1]]]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def select_calibration(pool: CalibrationPool, cfg: RunConfig) -> SelectionResult:
    cc = ClusterConfig(transform=cfg.feature_transform, max_iter=cfg.kmeans_max_iter,
                       n_init=cfg.kmeans_n_init)
    return build_calibration_set(pool, cfg.n_target, RngState(cfg.seed).derive("select"), cc)


def run_pipeline(net: ToyNet, pool: CalibrationPool, cfg: RunConfig, *,
                 selection: SelectionResult | list | None = None,
                 probe: np.ndarray | None = None) -> tuple[QuantizedNet, PipelineReport]:
    """Calibrate, quantize and compensate ``net`` on a calibration subset of ``pool``.

    ``selection`` may be a precomputed :class:`SelectionResult` or a plain id
    list; by default it is built from the pool with the configured seed.
    """
    t0 = time.perf_counter()
    if selection is None:
        selection = select_calibration(pool, cfg)
    if isinstance(selection, SelectionResult):
        ids, sel_dict = list(selection.selected_ids), selection.to_dict()
    else:
        ids, sel_dict = list(selection), {"selected_ids": list(selection)}
    sel_dict["planted_selected"] = sorted(set(ids) & pool.planted_ids)
    X = pool.stack(ids)
    if probe is None:
        probe = gen_probe(net.config, cfg.probe_size, RngState(cfg.seed).derive("probe"))

    fp = forward(net, X, taps=True).taps
    grads = None
    if cfg.grad_weighted and cfg.sim_scope == "local":
        grads = backward_wrt_activations(net, X)
    scfg, tcfg = cfg.search_config(), cfg.tre_config()
    state = QuantState()
    modules, traces = [], []

    for sub in net.module_names():
        records = []
        for uname in units_of(sub):
            taps = forward(net, X, state=state, taps=True).taps
            unit, x_cal, out_tap = build_unit(net, uname, taps)
            g = grads[out_tap] if grads is not None else None
            if cfg.sim_scope == "model":
                unit.forward = _model_scope(net, X, state, uname)
            cal = calibrate_layer(unit, x_cal, g, scfg)
            state.units[uname] = UnitQuant(cal.weight, cal.act)
            traces.extend(cal.traces)
            records.append(UnitRecord(uname, cal.weight.to_dict() if cal.weight else None,
                                      cal.act.to_dict() if cal.act else None, cal.n_evals))
            log.debug("%s: %d evaluations", uname, cal.n_evals)

        taps = forward(net, X, state=state, taps=True).taps
        x_in, y_q, y_t = _regression_data(fp, taps, sub, cfg.comp_target)
        if cfg.compensate:
            adapter = fit_adapter(x_in, y_t, y_q, cfg.rank, cfg.ridge_lambda, tcfg,
                                  fit_always=cfg.fit_always, tre_mode=cfg.tre_mode,
                                  n_samples=len(ids), store_f32=True)
            state.adapters[sub] = adapter
            y_hat = apply_adapter(adapter, x_in, y_q)
            t_val, active, nbytes = adapter.tre_at_fit, adapter.active, adapter_param_bytes(adapter)
        else:
            y_hat, t_val, active, nbytes = y_q, tre(y_t, y_q, tcfg), False, 0
        modules.append(ModuleRecord(
            sub, records, float(t_val), bool(active), int(nbytes), cfg.rank, x_in.shape[1], y_q.shape[1],
            float(np.mean((y_t - y_q) ** 2)), float(np.mean((y_t - y_hat) ** 2))))

    qnet = QuantizedNet(net, state)
    calib_curve = measure_accumulated_error(net, qnet, X)
    probe_curve = measure_accumulated_error(net, qnet, probe)
    for m, (_, a), (_, b) in zip(modules, calib_curve, probe_curve):
        m.accumulated_mse, m.probe_accumulated_mse = a, b

    fp_out = forward(net, probe).output
    q_out = forward(net, probe, state=state).output
    totals = {
        "similarity_evals": int(sum(m.evals for m in modules)),
        "active_adapters": int(sum(m.adapter_active for m in modules)),
        "adapter_bytes": int(sum(m.adapter_bytes for m in modules)),
        "final_mse_calib": calib_curve[-1][1],
        "final_mse_probe": float(np.mean((fp_out - q_out) ** 2)),
        "wall_time_s": time.perf_counter() - t0,
    }
    report = PipelineReport(cfg.to_dict(), sel_dict, modules, traces, totals)
    return qnet, report


def _regression_data(fp_taps, q_taps, sub: str, target: str):
    x_in = q_taps[f"{sub}.in"]
    y_q = q_taps[f"{sub}.out"]
    if target == "stream":
        # output that would restore the full-precision residual stream
        y_t = fp_taps[f"{sub}.res"] - x_in
    else:
        y_t = fp_taps[f"{sub}.out"]
    d = x_in.shape[-1]
    return x_in.reshape(-1, d), y_q.reshape(-1, y_q.shape[-1]), y_t.reshape(-1, y_t.shape[-1])


def _model_scope(net, X, state, uname):
    def run(a, w):
        return forward(net, X, state=state, override={uname: (a, w)}).output
    return run


def measure_accumulated_error(fp_net: ToyNet, q_net: QuantizedNet, probe) -> list:
    """Per-module MSE between full-precision and quantized residual streams, in depth order."""
    if fp_net.config != q_net.net.config:
        raise ShapeError("networks have different architectures")
    a = forward(fp_net, probe, taps=True).taps
    b = forward(q_net.net, probe, state=q_net.state, taps=True).taps
    return [(m, float(np.mean((a[f"{m}.res"] - b[f"{m}.res"]) ** 2))) for m in fp_net.module_names()]


def state_from_report(report: dict, adapters: dict) -> QuantState:
    """Rebuild a :class:`QuantState` from a serialized report and its adapters."""
    state = QuantState()
    for m in report["modules"]:
        for u in m["units"]:
            state.units[u["name"]] = UnitQuant(
                params_from_dict(u["weight"]) if u["weight"] else None,
                params_from_dict(u["act"]) if u["act"] else None)
    state.adapters.update(adapters)
    return state


def replay_ternary(trace: dict, eps_idx: int = 2) -> SearchTrace:
    """Re-run ternary search on a recorded landscape; unknown indices raise ``KeyError``."""
    landscape = {int(i): float(s) for i, s in trace["evaluations"]}
    return search_ternary(lambda i: landscape[i], len(trace["candidates"]), eps_idx)
