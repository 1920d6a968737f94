"""Quantization-interval search.

Candidate grids hold clipping ranges ``alpha``; a candidate's interval is
``alpha / q_max`` for the region being searched. The similarity objective is
the negative gradient-weighted squared error between full-precision and
quantized outputs. Two discrete solvers are provided: an exhaustive scan and a
memoized ternary search that needs O(log N) evaluations on unimodal
landscapes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateInputError, ParameterError, ShapeError
from .quantizer import (
    AnyQuantParams,
    BitWidthSpec,
    Partition,
    QuantParams,
    TwinQuantParams,
    quantize_twin,
    quantize_uniform,
)

log = logging.getLogger(__name__)

Evaluator = Callable[[int], float]


# ---------------------------------------------------------------------------
# Objective and candidates
# ---------------------------------------------------------------------------

def similarity(y_fp, y_alpha, g=None) -> float:
    """``-||g * (y_fp - y_alpha)||^2``. ``g=None`` is the all-ones weighting."""
    y_fp = np.asarray(y_fp, dtype=np.float64)
    y_alpha = np.asarray(y_alpha, dtype=np.float64)
    if y_fp.shape != y_alpha.shape:
        raise ShapeError(f"output shapes differ: {y_fp.shape} vs {y_alpha.shape}")
    diff = y_fp - y_alpha
    if g is not None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != y_fp.shape:
            raise ShapeError(f"weight shape {g.shape} does not match outputs {y_fp.shape}")
        diff = g * diff
    return -float(np.sum(diff * diff))


@dataclass(frozen=True)
class CandidateGrid:
    alphas: tuple
    generation: str = "linear"
    lo_frac: float = 0.1
    hi_frac: float = 1.2

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.size < 3:
            raise ParameterError("a candidate grid needs at least 3 entries")
        if not (np.all(a > 0) and np.all(np.diff(a) > 0)):
            raise ParameterError("candidates must be positive and strictly ascending")

    def __len__(self):
        return len(self.alphas)

    def __getitem__(self, i):
        return self.alphas[i]


def make_grid(x, n: int = 100, generation: str = "linear", lo_frac: float = 0.1,
              hi_frac: float = 1.2) -> CandidateGrid:
    if n < 3:
        raise ParameterError(f"grid size must be >= 3, got {n}")
    if not 0 < lo_frac < hi_frac:
        raise ParameterError(f"need 0 < lo_frac < hi_frac, got {lo_frac}, {hi_frac}")
    x = np.asarray(x, dtype=np.float64)
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    if not amax > 0:
        raise DegenerateInputError("cannot build a grid for an all-zero tensor")
    if generation == "linear":
        alphas = np.linspace(lo_frac * amax, hi_frac * amax, n)
    elif generation == "log":
        alphas = np.geomspace(lo_frac * amax, hi_frac * amax, n)
    else:
        raise ParameterError(f"unknown grid generation {generation!r}")
    return CandidateGrid(tuple(float(a) for a in alphas), generation, lo_frac, hi_frac)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

@dataclass
class SearchTrace:
    evaluations: list = field(default_factory=list)  # (candidate index, similarity), in call order
    chosen_index: int = -1
    method: str = "exhaustive"
    converged: bool = True
    candidates: Optional[list] = None
    label: str = ""

    @property
    def n_evals(self) -> int:
        return len(self.evaluations)

    @property
    def chosen_value(self) -> float:
        return self.candidates[self.chosen_index]

    def landscape(self) -> dict:
        return dict(self.evaluations)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "method": self.method,
            "chosen_index": self.chosen_index,
            "converged": self.converged,
            "candidates": list(self.candidates) if self.candidates is not None else None,
            "evaluations": [[int(i), float(s)] for i, s in self.evaluations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchTrace":
        return cls(evaluations=[(int(i), float(s)) for i, s in d["evaluations"]],
                   chosen_index=int(d["chosen_index"]), method=d["method"],
                   converged=bool(d["converged"]), candidates=d.get("candidates"),
                   label=d.get("label", ""))


class _Memo:
    def __init__(self, fn: Evaluator):
        self.fn = fn
        self.cache: dict[int, float] = {}
        self.order: list[tuple[int, float]] = []

    def __call__(self, i: int) -> float:
        if i not in self.cache:
            v = float(self.fn(i))
            self.cache[i] = v
            self.order.append((i, v))
        return self.cache[i]


def _best(memo: _Memo, indices) -> int:
    best = None
    for i in indices:
        if best is None or memo(i) > memo(best):
            best = i
    return best


def search_exhaustive(evaluate: Evaluator, n: int) -> SearchTrace:
    """Evaluate every candidate and return the argmax (lowest index on ties)."""
    if n < 1:
        raise ParameterError("need at least one candidate")
    memo = _Memo(evaluate)
    chosen = _best(memo, range(n))
    return SearchTrace(memo.order, chosen, "exhaustive", True)


def search_ternary(evaluate: Evaluator, n: int, eps_idx: int = 2) -> SearchTrace:
    """Discrete ternary search over candidate indices ``0..n-1``.

    The bracket ``[L, R]`` shrinks by a third per iteration until
    ``R - L <= eps_idx``; the remaining bracket is then scanned. Values are
    memoized so ``trace.n_evals`` counts distinct candidates.
    """
    if n < 1:
        raise ParameterError("need at least one candidate")
    if eps_idx < 2:
        raise ParameterError("eps_idx must be >= 2")
    memo = _Memo(evaluate)
    lo, hi = 0, n - 1
    while hi - lo > eps_idx:
        third = (hi - lo) // 3
        m1, m2 = lo + third, hi - third
        if m1 == m2:
            m2 = m1 + 1
        if memo(m1) < memo(m2):
            lo = m1
        else:
            hi = m2
    chosen = _best(memo, range(lo, hi + 1))
    return SearchTrace(memo.order, chosen, "ternary", True)


def search_ternary_continuous(f: Callable[[float], float], lo: float, hi: float,
                              rel_eps: float = 1e-4, max_iter: int = 200) -> SearchTrace:
    """Ternary search over a real interval, stopping once ``hi - lo <= rel_eps * hi_0``.

    Every evaluated point is appended to ``trace.candidates``; indices in
    ``trace.evaluations`` refer to that list.
    """
    if not 0 < lo < hi:
        raise ParameterError("need 0 < lo < hi")
    tol = rel_eps * hi
    points: list[float] = []
    evals: list[tuple[int, float]] = []

    def ev(a: float) -> float:
        s = float(f(a))
        points.append(a)
        evals.append((len(points) - 1, s))
        return s

    it = 0
    while hi - lo > tol and it < max_iter:
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if ev(m1) < ev(m2):
            lo = m1
        else:
            hi = m2
        it += 1
    ev(0.5 * (lo + hi))
    best = max(range(len(evals)), key=lambda j: (evals[j][1], -j))
    return SearchTrace(evals, best, "ternary-continuous", hi - lo <= tol, points)


def is_strictly_unimodal(values) -> bool:
    """Strictly increasing up to a single peak, strictly decreasing after it."""
    v = np.asarray(values, dtype=np.float64)
    if v.size <= 1:
        return True
    d = np.diff(v)
    if np.any(d == 0):
        return False
    down = np.nonzero(d < 0)[0]
    if down.size == 0:
        return True
    return bool(np.all(d[down[0]:] < 0))


def run_search(evaluate: Evaluator, n: int, method: str, eps_idx: int = 2) -> SearchTrace:
    if method == "exhaustive":
        return search_exhaustive(evaluate, n)
    if method == "ternary":
        return search_ternary(evaluate, n, eps_idx)
    raise ParameterError(f"unknown search method {method!r}")


# ---------------------------------------------------------------------------
# Per-unit calibration
# ---------------------------------------------------------------------------

@dataclass
class SearchConfig:
    bits_w: int = 4
    bits_a: int = 8
    grid_n: int = 100
    grid_lo: float = 0.1
    grid_hi: float = 1.2
    grid_generation: str = "linear"
    method: str = "ternary"
    eps_idx: int = 2
    twin_rounds: int = 2
    # R1 of a by-threshold split holds the many small values; it needs a finer, wider grid
    threshold_r1_lo: float = 1e-3
    threshold_r1_generation: str = "log"
    continuous: bool = False
    continuous_eps: float = 1e-4


@dataclass
class QuantUnit:
    """A quantizable computation ``forward(act, weight) -> output``.

    ``act_mode`` selects the activation quantizer: ``uniform``, ``twin-sign``
    or ``twin-threshold``. ``weight`` may be ``None`` for units that only
    quantize an activation (e.g. attention probabilities).
    """

    name: str
    forward: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    weight: Optional[np.ndarray] = None
    act_mode: str = "uniform"
    act_signed: bool = True


@dataclass
class UnitCalibration:
    weight: Optional[QuantParams]
    act: Optional[AnyQuantParams]
    traces: list

    @property
    def n_evals(self) -> int:
        return sum(t.n_evals for t in self.traces)


def _search_deltas(make_output, grid: CandidateGrid, divisor: float, y_fp, g,
                   cfg: SearchConfig, label: str) -> tuple[float, SearchTrace]:
    alphas = grid.alphas

    if cfg.continuous:
        trace = search_ternary_continuous(
            lambda a: similarity(y_fp, make_output(a / divisor), g), alphas[0], alphas[-1],
            cfg.continuous_eps)
        trace.label = label
        return trace.chosen_value / divisor, trace

    def evaluate(i: int) -> float:
        return similarity(y_fp, make_output(alphas[i] / divisor), g)

    trace = run_search(evaluate, len(alphas), cfg.method, cfg.eps_idx)
    trace.candidates = list(alphas)
    trace.label = label
    return alphas[trace.chosen_index] / divisor, trace


def calibrate_layer(unit: QuantUnit, x_cal, g=None, cfg: SearchConfig | None = None) -> UnitCalibration:
    """Search the weight interval (activations in full precision), then the
    activation interval with the chosen weight quantizer held fixed.

    Twin activations alternate 1-D searches over the two region intervals for
    ``cfg.twin_rounds`` rounds.
    """
    cfg = cfg or SearchConfig()
    x_cal = np.asarray(x_cal, dtype=np.float64)
    if x_cal.size == 0:
        raise DegenerateInputError(f"{unit.name}: empty calibration input")
    traces: list[SearchTrace] = []
    y_fp = unit.forward(x_cal, unit.weight)

    def grid_for(t, lo=cfg.grid_lo, gen=cfg.grid_generation):
        return make_grid(t, cfg.grid_n, gen, lo, cfg.grid_hi)

    wq_params = None
    w_used = unit.weight
    if unit.weight is not None:
        if not np.any(unit.weight):
            raise DegenerateInputError(f"{unit.name}: all-zero weight tensor")
        bw = BitWidthSpec(cfg.bits_w, signed=True)
        delta, tr = _search_deltas(
            lambda d: unit.forward(x_cal, quantize_uniform(unit.weight, QuantParams(d, bw))),
            grid_for(unit.weight), bw.q_max, y_fp, g, cfg, f"{unit.name}:weight")
        traces.append(tr)
        wq_params = QuantParams(delta, bw)
        w_used = quantize_uniform(unit.weight, wq_params)

    if not np.any(x_cal):
        raise DegenerateInputError(f"{unit.name}: all-zero activation tensor")
    bw = BitWidthSpec(cfg.bits_a, signed=unit.act_signed)

    if unit.act_mode == "uniform":
        delta, tr = _search_deltas(
            lambda d: unit.forward(quantize_uniform(x_cal, QuantParams(d, bw)), w_used),
            grid_for(x_cal), bw.q_max, y_fp, g, cfg, f"{unit.name}:act")
        traces.append(tr)
        return UnitCalibration(wq_params, QuantParams(delta, bw), traces)

    if unit.act_mode == "twin-sign":
        act = _calibrate_twin_sign(unit, x_cal, w_used, y_fp, g, bw, cfg, grid_for, traces)
    elif unit.act_mode == "twin-threshold":
        act = _calibrate_twin_threshold(unit, x_cal, w_used, y_fp, g, bw, cfg, grid_for, traces)
    else:
        raise ParameterError(f"unknown activation mode {unit.act_mode!r}")
    return UnitCalibration(wq_params, act, traces)


def _calibrate_twin_sign(unit, x_cal, w_used, y_fp, g, bw, cfg, grid_for, traces):
    part = Partition("by-sign")
    neg, pos = x_cal[x_cal < 0], x_cal[x_cal >= 0]
    div1, div2 = float(-bw.q_min), float(bw.q_max)
    # start from max-magnitude (no clipping) intervals; an empty region borrows the other's
    d1 = float(np.max(-neg)) / div1 if neg.size and np.any(neg) else None
    d2 = float(np.max(pos)) / div2 if pos.size and np.any(pos) else None
    d1 = d1 if d1 is not None else d2
    d2 = d2 if d2 is not None else d1
    grid1 = grid_for(neg) if neg.size and np.any(neg) else None
    grid2 = grid_for(pos) if pos.size and np.any(pos) else None

    def out(a, b):
        return unit.forward(quantize_twin(x_cal, TwinQuantParams(a, b, bw, part)), w_used)

    for rnd in range(cfg.twin_rounds):
        if grid1 is not None:
            d1, tr = _search_deltas(lambda d: out(d, d2), grid1, div1, y_fp, g, cfg,
                                    f"{unit.name}:act.r1:round{rnd}")
            traces.append(tr)
        if grid2 is not None:
            d2, tr = _search_deltas(lambda d: out(d1, d), grid2, div2, y_fp, g, cfg,
                                    f"{unit.name}:act.r2:round{rnd}")
            traces.append(tr)
    return TwinQuantParams(d1, d2, bw, part)


def _calibrate_twin_threshold(unit, x_cal, w_used, y_fp, g, bw, cfg, grid_for, traces):
    # R1 covers exactly what its interval can represent: threshold = d1 * q_max
    qmax = float(bw.q_max)
    amax = float(np.max(np.abs(x_cal)))
    d1 = d2 = amax / qmax
    grid1 = grid_for(x_cal, lo=cfg.threshold_r1_lo, gen=cfg.threshold_r1_generation)
    grid2 = grid_for(x_cal)

    def params(a, b):
        return TwinQuantParams(a, b, bw, Partition("by-threshold", a * qmax))

    def out(a, b):
        return unit.forward(quantize_twin(x_cal, params(a, b)), w_used)

    for rnd in range(cfg.twin_rounds):
        d1, tr = _search_deltas(lambda d: out(d, d2), grid1, qmax, y_fp, g, cfg,
                                f"{unit.name}:act.r1:round{rnd}")
        traces.append(tr)
        d2, tr = _search_deltas(lambda d: out(d1, d), grid2, qmax, y_fp, g, cfg,
                                f"{unit.name}:act.r2:round{rnd}")
        traces.append(tr)
    return params(d1, d2)


def ternary_eval_bound(n: int, eps_idx: int = 2) -> int:
    """Upper bound on distinct evaluations of :func:`search_ternary` for ``n`` candidates."""
    if n <= 1:
        return 1
    return 2 * math.ceil(math.log(n) / math.log(1.5)) + eps_idx + 1
