"""Run configuration: a single flat JSON document, validated strictly.

Unknown keys, wrong types and out-of-range values all raise
:class:`~biharm4.errors.ConfigError`; the CLI maps that to exit status 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .gauge import EPS_GAUGE, EPS_PAIR

# Named tolerances, with what each one bounds.  Listed in ``--help``.
DEFAULT_TOLERANCES = {
    "identity_ratio": 0.1,        # r_total(2n) / r_total(n) for the identity campaign
    "identity_abs": 1e-6,         # r_total(2n) relative to the combined field norms
    "div_free": 1e-6,             # |div W| / |W| for sphere potentials at 2n
    "refinement_ratio": 0.1,      # |div W|(2n) / |div W|(n)
    "splitting": 1e-8,            # |W - grad(omega) - F| / |W|
    "calibration": 1e-4,          # finite-difference vs analytic energy derivative
    "critical_residual": 1e-6,    # |pde_residual| of the great-circle map
    "generic_path": 1e-6,         # sphere vs generic-target right-hand side at 2n
    "coulomb": 1e-10,             # |div Omega + omega| / |omega|
    "uhlenbeck": 1e-8,            # absolute factorization residual
    "pair": 1e-6,                 # gauge-equation residual relative to 1 + |pots|
    "scaling_factor": 2.0,        # |A - I|, |B| ratios under eps -> eps/2 within [2/f, 2f]
    "energy_slack": 1e-10,        # relative energy increase allowed per flow step
    "on_target": 1e-10,           # max distance of u from the target after a step
}

ENERGIES = ("extrinsic", "intrinsic")
TARGET_KINDS = {"sphere": {"m"}, "torus": {"major", "minor", "tube_radius"}}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)
            and math.isfinite(value))


@dataclass
class RunConfig:
    grid_n: int = 8
    m: int = 3
    target: dict = field(default_factory=lambda: {"kind": "sphere"})
    energy: str = "extrinsic"
    seed: int = 42
    n_seeds: int = 10
    dt: float = 1e-3
    t_end: float = 0.05
    diag_every: int = 10
    amplitude: float = 0.1
    epsilon: float = 1.0
    gauge_epsilon: float = EPS_GAUGE
    pair_epsilon: float = 1.0
    pair_seeds: int = 20
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "."

    def __post_init__(self):
        self.validate()

    def tol(self, name: str) -> float:
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])

    def validate(self) -> None:
        for name in ("grid_n", "m", "seed", "n_seeds", "pair_seeds", "diag_every"):
            if not _is_int(getattr(self, name)):
                raise ConfigError(f"{name} must be an integer")
        if self.grid_n < 8 or self.grid_n % 2:
            raise ConfigError("grid_n must be an even integer >= 8")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name in ("n_seeds", "pair_seeds", "diag_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("dt", "amplitude", "epsilon", "gauge_epsilon", "pair_epsilon"):
            value = getattr(self, name)
            if not _is_number(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive number")
        if self.gauge_epsilon > EPS_GAUGE or self.pair_epsilon > EPS_PAIR:
            raise ConfigError(f"gauge_epsilon <= {EPS_GAUGE:g} and pair_epsilon <= {EPS_PAIR:g} "
                              "required (empirical convergence limits)")
        if not _is_number(self.t_end) or self.t_end < 0:
            raise ConfigError("t_end must be a non-negative number")
        if self.energy not in ENERGIES:
            raise ConfigError(f"energy must be one of {ENERGIES}")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigError("out_dir must be a non-empty string")
        self._validate_target()
        if not isinstance(self.tolerances, dict):
            raise ConfigError("tolerances must be a mapping")
        unknown = sorted(set(self.tolerances) - set(DEFAULT_TOLERANCES))
        if unknown:
            raise ConfigError(f"unknown tolerance names: {', '.join(unknown)}")
        for name, value in self.tolerances.items():
            if not _is_number(value) or value <= 0:
                raise ConfigError(f"tolerance {name} must be a positive number")

    def _validate_target(self):
        if not isinstance(self.target, dict):
            raise ConfigError("target must be a mapping with a 'kind' key")
        kind = self.target.get("kind", "sphere")
        if kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {kind!r}")
        extra = sorted(set(self.target) - TARGET_KINDS[kind] - {"kind"})
        if extra:
            raise ConfigError(f"unknown keys for target {kind!r}: {', '.join(extra)}")
        for key, value in self.target.items():
            if key != "kind" and not _is_number(value):
                raise ConfigError(f"target.{key} must be a number")
        if kind == "sphere" and self.target.get("m", self.m) != self.m:
            raise ConfigError("target.m must equal m")
        if kind == "torus" and self.m != 3:
            raise ConfigError("the torus target lives in R^3, so m must be 3")

    def target_spec(self) -> dict:
        spec = dict(self.target)
        if spec.get("kind", "sphere") == "sphere":
            spec["m"] = self.m
        return spec

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tolerances"] = {name: self.tol(name) for name in sorted(DEFAULT_TOLERANCES)}
        return out

    @classmethod
    def from_mapping(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def load_config(path=None, seed=None) -> RunConfig:
    """Read ``path`` (defaults only when ``None``); ``seed`` overrides the file."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if seed is not None:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = {**data, "seed": seed}
    return RunConfig.from_mapping(data)


def tolerance_help() -> str:
    return "\n".join(f"  {name:<18} default {value:g}" for name, value in DEFAULT_TOLERANCES.items())
