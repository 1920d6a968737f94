"""Run configuration shared by the pipeline and the command line."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

from .compensation import TREConfig
from .errors import ParameterError
from .search import SearchConfig
from .toynet import PoolSpec, ToyNetConfig


@dataclass
class RunConfig:
    # quantization
    bits_w: int = 4
    bits_a: int = 8
    grid_n: int = 100
    grid_lo: float = 0.1
    grid_hi: float = 1.2
    grid_generation: str = "linear"
    method: str = "ternary"
    eps_idx: int = 2
    twin_rounds: int = 2
    sim_scope: str = "local"
    grad_weighted: bool = False
    # calibration set
    pool_size: int = 20
    outlier_fraction: float = 0.25
    n_target: int = 8
    kmeans_max_iter: int = 100
    kmeans_n_init: int = 10
    feature_transform: str = "signed-log"
    eps_s: float = 1e-8
    noise_channels: int = 8
    noise_scale: float = 4.0
    noise_df: float = 3.0
    # compensation
    rho: float = 0.01
    tau: float = 0.007
    tre_eps: float = 1e-12
    rank: int = 16
    ridge_lambda: float = 1e-6
    comp_target: str = "stream"
    tre_mode: str = "pooled"
    fit_always: bool = False
    compensate: bool = True
    # network and data
    depth: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    seq_len: int = 32
    outlier_channels: int = 4
    outlier_scale: float = 8.0
    probe_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("ternary", "exhaustive"):
            raise ParameterError(f"unknown search method {self.method!r}")
        if self.sim_scope not in ("local", "model"):
            raise ParameterError(f"unknown similarity scope {self.sim_scope!r}")
        if self.comp_target not in ("stream", "module"):
            raise ParameterError(f"unknown compensation target {self.comp_target!r}")
        if self.n_target <= 0 or self.n_target % 2:
            raise ParameterError("n_target must be a positive even integer")
        self.tau = float(self.tau)

    def search_config(self) -> SearchConfig:
        return SearchConfig(bits_w=self.bits_w, bits_a=self.bits_a, grid_n=self.grid_n,
                            grid_lo=self.grid_lo, grid_hi=self.grid_hi,
                            grid_generation=self.grid_generation, method=self.method,
                            eps_idx=self.eps_idx, twin_rounds=self.twin_rounds)

    def tre_config(self) -> TREConfig:
        return TREConfig(self.rho, self.tau, self.tre_eps)

    def net_config(self) -> ToyNetConfig:
        return ToyNetConfig(self.depth, self.d_model, self.n_heads, self.d_ff, self.seq_len,
                            self.outlier_channels, self.outlier_scale, self.seed)

    def pool_spec(self) -> PoolSpec:
        return PoolSpec(self.noise_channels, self.noise_scale, self.noise_df)

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity
        if math.isinf(d["tau"]):
            d["tau"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "tau" in d:
            d["tau"] = float(d["tau"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
