"""A small pre-norm transformer used as the quantization testbed.

Each block is ``x += Attn(LN(x)); x += MLP(LN(x))`` with multi-head softmax
attention and an exact-erf GELU MLP. There is no positional encoding, so the
network is equivariant to permutations of the sequence.

A forward pass can record every intermediate activation ("taps"), run with a
:class:`QuantState` that fake-quantizes calibrated units and adds fitted
adapters, add perturbations at named taps (for finite differences), and
replace a single unit's quantized operands (for whole-model similarity).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .calibration import CalibrationPool, CalibrationSample
from .compensation import Adapter, apply_adapter
from .errors import ParameterError, ShapeError
from .numerics import RngState, rand_normal, rand_student_t
from .quantizer import AnyQuantParams, QuantParams, quantize, quantize_uniform

LN_EPS = 1e-12

SUBMODULES = ("attn", "mlp")
UNITS = {"attn": ("qkv", "softmax", "proj"), "mlp": ("fc1", "fc2")}


@dataclass
class ToyNetConfig:
    depth: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    seq_len: int = 32
    outlier_channels: int = 4
    outlier_scale: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.d_model < 1 or self.d_ff < 1 or self.seq_len < 1:
            raise ParameterError("network dimensions must be positive")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ParameterError("d_model must be divisible by n_heads")
        if not 0 <= self.outlier_channels <= min(self.d_model, self.d_ff):
            raise ParameterError("outlier_channels must not exceed d_model or d_ff")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ToyNet:
    config: ToyNetConfig
    params: dict  # name -> ndarray, insertion-ordered
    outlier_idx: tuple = ()

    def block(self, i: int, key: str) -> np.ndarray:
        return self.params[f"blocks.{i}.{key}"]

    def module_names(self) -> list:
        return [f"blocks.{i}.{s}" for i in range(self.config.depth) for s in SUBMODULES]

    def unit_names(self) -> list:
        return [f"blocks.{i}.{s}.{u}" for i in range(self.config.depth) for s in SUBMODULES
                for u in UNITS[s]]


def init_toynet(cfg: ToyNetConfig) -> ToyNet:
    """Seeded Gaussian init (std 1/sqrt(fan_in)).

    The designated outlier channels of every fc1 layer get rows scaled by
    ``outlier_scale``, so a few post-GELU channels carry rare, very large
    positive values.
    """
    rng = RngState(cfg.seed)
    d, f = cfg.d_model, cfg.d_ff
    order = rng.derive("outlier-channels").generator().permutation(min(d, f))
    outliers = tuple(sorted(int(c) for c in order[: cfg.outlier_channels]))
    params = {}

    def gauss(name, shape, std):
        params[name] = rand_normal(rng.derive(name), shape, 0.0, std)

    for i in range(cfg.depth):
        p = f"blocks.{i}"
        for s in SUBMODULES:
            params[f"{p}.{s}.ln.weight"] = 1.0 + rand_normal(rng.derive(f"{p}.{s}.ln.weight"), (d,), 0.0, 0.1)
            gauss(f"{p}.{s}.ln.bias", (d,), 0.1)
        gauss(f"{p}.attn.qkv.weight", (3 * d, d), d**-0.5)
        gauss(f"{p}.attn.proj.weight", (d, d), d**-0.5)
        gauss(f"{p}.mlp.fc1.weight", (f, d), d**-0.5)
        gauss(f"{p}.mlp.fc1.bias", (f,), 0.1)
        gauss(f"{p}.mlp.fc2.weight", (d, f), f**-0.5)
        gauss(f"{p}.mlp.fc2.bias", (d,), 0.1)
        for c in outliers:
            params[f"{p}.mlp.fc1.weight"][c] *= cfg.outlier_scale
    return ToyNet(cfg, params, outliers)


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def layer_norm(x, weight, bias, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * weight + bias


def _layer_norm_backward(x, weight, g_out, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gx = g_out * weight
    return inv * (gx - gx.mean(axis=-1, keepdims=True)
                  - xhat * (gx * xhat).mean(axis=-1, keepdims=True))


def gelu(x) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def softmax(s) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def split_heads(t, n_heads: int) -> np.ndarray:
    *lead, seq, d = t.shape
    return np.swapaxes(t.reshape(*lead, seq, n_heads, d // n_heads), -2, -3)


def merge_heads(t) -> np.ndarray:
    t = np.swapaxes(t, -2, -3)
    *lead, seq, h, dh = t.shape
    return t.reshape(*lead, seq, h * dh)


def linear(a, w, b=None) -> np.ndarray:
    out = a @ w.T
    return out if b is None else out + b


def attend(probs, v_heads) -> np.ndarray:
    """Apply per-head attention probabilities to values and merge the heads."""
    return merge_heads(probs @ v_heads)


def attention_probs(qkv, n_heads: int) -> tuple[np.ndarray, np.ndarray]:
    d = qkv.shape[-1] // 3
    q, k, v = (split_heads(qkv[..., j * d:(j + 1) * d], n_heads) for j in range(3))
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    return softmax(scores), v


# ---------------------------------------------------------------------------
# Quantization state
# ---------------------------------------------------------------------------

@dataclass
class UnitQuant:
    weight: Optional[QuantParams] = None
    act: Optional[AnyQuantParams] = None


@dataclass
class QuantState:
    units: dict = field(default_factory=dict)  # unit name -> UnitQuant
    adapters: dict = field(default_factory=dict)  # submodule name -> Adapter


@dataclass
class QuantizedNet:
    net: ToyNet
    state: QuantState


@dataclass
class ForwardResult:
    output: np.ndarray
    taps: dict


class _Runner:
    def __init__(self, net, state, taps, perturb, override):
        self.net, self.state = net, state or QuantState()
        self.record = taps
        self.perturb = perturb or {}
        self.override = override or {}
        self.taps: dict = {}

    def tap(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.perturb:
            value = value + self.perturb[name]
        if self.record:
            self.taps[name] = value
        return value

    def operands(self, unit: str, act, weight):
        if unit in self.override:
            return self.override[unit]
        uq = self.state.units.get(unit)
        if uq is None:
            return act, weight
        a = quantize(act, uq.act)
        w = weight if (weight is None or uq.weight is None) else quantize_uniform(weight, uq.weight)
        return a, w


def forward(net: ToyNet, x, *, state: QuantState | None = None, taps: bool = False,
            perturb: dict | None = None, override: dict | None = None) -> ForwardResult:
    """Run the network on ``x`` of shape ``[..., seq_len, d_model]``.

    ``override`` maps a unit name to the ``(activation, weight)`` operands it
    should use verbatim, bypassing ``state`` for that unit.
    """
    cfg = net.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2:] != (cfg.seq_len, cfg.d_model):
        raise ShapeError(f"expected [..., {cfg.seq_len}, {cfg.d_model}], got {x.shape}")
    run = _Runner(net, state, taps, perturb, override)
    h = run.tap("input", x)
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        # attention
        s_in = run.tap(f"{p}.attn.in", h)
        a = run.tap(f"{p}.attn.ln", layer_norm(s_in, net.block(i, "attn.ln.weight"), net.block(i, "attn.ln.bias")))
        qkv = run.tap(f"{p}.attn.qkv", linear(*run.operands(f"{p}.attn.qkv", a, net.block(i, "attn.qkv.weight"))))
        probs, v = attention_probs(qkv, cfg.n_heads)
        probs = run.tap(f"{p}.attn.probs", probs)
        pq, _ = run.operands(f"{p}.attn.softmax", probs, None)
        ctx = run.tap(f"{p}.attn.ctx", attend(pq, v))
        out = run.tap(f"{p}.attn.out", linear(*run.operands(f"{p}.attn.proj", ctx, net.block(i, "attn.proj.weight"))))
        h = _residual(run, f"{p}.attn", s_in, out)
        # mlp
        s_in = run.tap(f"{p}.mlp.in", h)
        a = run.tap(f"{p}.mlp.ln", layer_norm(s_in, net.block(i, "mlp.ln.weight"), net.block(i, "mlp.ln.bias")))
        f1 = run.tap(f"{p}.mlp.fc1", linear(*run.operands(f"{p}.mlp.fc1", a, net.block(i, "mlp.fc1.weight")),
                                            net.block(i, "mlp.fc1.bias")))
        act = run.tap(f"{p}.mlp.act", gelu(f1))
        out = run.tap(f"{p}.mlp.out", linear(*run.operands(f"{p}.mlp.fc2", act, net.block(i, "mlp.fc2.weight")),
                                             net.block(i, "mlp.fc2.bias")))
        h = _residual(run, f"{p}.mlp", s_in, out)
    h = run.tap("output", h)
    return ForwardResult(h, run.taps)


def _residual(run: _Runner, sub: str, s_in, out):
    adapter: Adapter | None = run.state.adapters.get(sub)
    if adapter is not None and adapter.active:
        lead = out.shape[:-1]
        out = apply_adapter(adapter, s_in.reshape(-1, s_in.shape[-1]),
                            out.reshape(-1, out.shape[-1])).reshape(*lead, -1)
    return run.tap(f"{sub}.res", s_in + out)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def backward_wrt_activations(net: ToyNet, x, upstream=None) -> dict:
    """Gradients of ``<upstream, output>`` w.r.t. every tapped activation.

    ``upstream`` defaults to the output itself, i.e. the loss ``||output||^2 / 2``.
    Keys match the tap names of :func:`forward` (full precision only).
    """
    cfg = net.config
    fw = forward(net, x, taps=True)
    t = fw.taps
    g_h = fw.output.copy() if upstream is None else np.asarray(upstream, dtype=np.float64)
    if g_h.shape != fw.output.shape:
        raise ShapeError(f"upstream shape {g_h.shape} does not match output {fw.output.shape}")
    grads = {"output": g_h}
    for i in reversed(range(cfg.depth)):
        p = f"blocks.{i}"
        # mlp: res = in + fc2(gelu(fc1(ln(in))))
        grads[f"{p}.mlp.res"] = g_h
        grads[f"{p}.mlp.out"] = g_h
        g_act = g_h @ net.block(i, "mlp.fc2.weight")
        grads[f"{p}.mlp.act"] = g_act
        g_f1 = g_act * _gelu_grad(t[f"{p}.mlp.fc1"])
        grads[f"{p}.mlp.fc1"] = g_f1
        g_ln = g_f1 @ net.block(i, "mlp.fc1.weight")
        grads[f"{p}.mlp.ln"] = g_ln
        g_h = g_h + _layer_norm_backward(t[f"{p}.mlp.in"], net.block(i, "mlp.ln.weight"), g_ln)
        grads[f"{p}.mlp.in"] = g_h
        # attention: res = in + proj(attend(softmax(qk^T), v))
        grads[f"{p}.attn.res"] = g_h
        grads[f"{p}.attn.out"] = g_h
        g_ctx = g_h @ net.block(i, "attn.proj.weight")
        grads[f"{p}.attn.ctx"] = g_ctx
        qkv = t[f"{p}.attn.qkv"]
        d = cfg.d_model
        q, k, v = (split_heads(qkv[..., j * d:(j + 1) * d], cfg.n_heads) for j in range(3))
        probs = t[f"{p}.attn.probs"]
        g_ctx_h = split_heads(g_ctx, cfg.n_heads)
        g_probs = g_ctx_h @ np.swapaxes(v, -1, -2)
        grads[f"{p}.attn.probs"] = g_probs
        g_v = np.swapaxes(probs, -1, -2) @ g_ctx_h
        g_scores = probs * (g_probs - (g_probs * probs).sum(axis=-1, keepdims=True))
        scale = 1.0 / np.sqrt(cfg.d_head)
        g_q = g_scores @ k * scale
        g_k = np.swapaxes(g_scores, -1, -2) @ q * scale
        g_qkv = np.concatenate([merge_heads(g_q), merge_heads(g_k), merge_heads(g_v)], axis=-1)
        grads[f"{p}.attn.qkv"] = g_qkv
        g_ln = g_qkv @ net.block(i, "attn.qkv.weight")
        grads[f"{p}.attn.ln"] = g_ln
        g_h = g_h + _layer_norm_backward(t[f"{p}.attn.in"], net.block(i, "attn.ln.weight"), g_ln)
        grads[f"{p}.attn.in"] = g_h
    grads["input"] = g_h
    return grads


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class PoolSpec:
    noise_channels: int = 8
    noise_scale: float = 4.0
    df: float = 3.0


def gen_calibration_pool(cfg: ToyNetConfig, m: int, outlier_fraction: float, rng: RngState,
                         spec: PoolSpec = PoolSpec()) -> CalibrationPool:
    """``m`` Gaussian inputs; a planted fraction gets student-t noise on shared channels."""
    if m < 2:
        raise ParameterError("pool needs at least 2 samples")
    if not 0 <= outlier_fraction <= 1:
        raise ParameterError(f"outlier_fraction must lie in [0, 1], got {outlier_fraction}")
    if not 0 < spec.noise_channels <= cfg.d_model:
        raise ParameterError("noise_channels must lie in [1, d_model]")
    n_out = int(round(m * outlier_fraction))
    width = max(3, len(str(m - 1)))
    ids = [f"s{j:0{width}d}" for j in range(m)]
    planted = rng.derive("planted").generator().permutation(m)[:n_out]
    channels = np.sort(rng.derive("noise-channels").generator().permutation(cfg.d_model)[: spec.noise_channels])
    samples = []
    for j, sid in enumerate(ids):
        x = rand_normal(rng.derive(f"sample/{sid}"), (cfg.seq_len, cfg.d_model))
        if j in set(planted.tolist()):
            noise = rand_student_t(rng.derive(f"noise/{sid}"), (cfg.seq_len, len(channels)), spec.df,
                                   spec.noise_scale)
            x[:, channels] += noise
        samples.append(CalibrationSample(sid, x))
    planted_ids = frozenset(ids[j] for j in planted.tolist())
    meta = {"noise_channels": channels.tolist(), "noise_scale": spec.noise_scale, "df": spec.df}
    return CalibrationPool(samples, planted_ids, meta)


def gen_probe(cfg: ToyNetConfig, n: int, rng: RngState) -> np.ndarray:
    """Clean held-out inputs, ``[n, seq_len, d_model]``."""
    return rand_normal(rng, (n, cfg.seq_len, cfg.d_model))


def layer_tokens(net: ToyNet):
    """Model callable for :func:`stability_scores`: block outputs as ``[tokens, channels]``."""

    def model(payload):
        t = forward(net, payload, taps=True).taps
        return [t[f"blocks.{i}.mlp.res"] for i in range(net.config.depth)]

    return model
