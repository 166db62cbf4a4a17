"""Plain-text ``key = value`` experiment configuration.

Lines starting with ``#`` and blank lines are ignored. List values are comma
separated. Every key must be known for the experiment; its type is taken
from the default value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..sph.poiseuille import VISCOSITY_MODELS

EXPERIMENTS = ("circle", "square", "gradient", "poiseuille", "scaling")
BACKENDS = ("all", "cell", "rcll")
PRECISIONS = ("fp64", "fp32", "fp16")

_TABLE_LADDER = [0.01, 0.005, 0.002, 0.00125, 0.001, 0.0005]

DEFAULTS: dict[str, dict] = {
    "circle": {
        "dR_ladder": [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8],
        "n_ring": 64,
        "precisions": ["fp64", "fp32", "fp16"],
    },
    "square": {
        "ds_ladder": list(_TABLE_LADDER),
        "backends": ["all", "cell", "rcll"],
        "precisions": ["fp16"],
        "dim": 2,
        "all_list_max_n": 40_000,
        "memory_budget_gb": 8.0,
    },
    "gradient": {
        "ds_ladder": list(_TABLE_LADDER),
        "backends": ["all", "cell", "rcll"],
        "precisions": ["fp64", "fp16"],
        "jitter": 0.19,
        "jitter_kind": "sign",
    },
    "poiseuille": {
        "approaches": ["I", "II", "III"],
        "ds_ladder": [0.025, 0.01, 0.0025],
        "min_ds": 0.0025,
        "t_end": 1.0,
        "profile_times": [0.1, 1.0],
        "viscosity": "laplacian",
        "memory_budget_gb": 8.0,
    },
    "scaling": {
        "n_ladder": [1_000, 10_000, 100_000, 1_000_000],
        "backends": ["all", "cell", "rcll"],
        "precisions": ["fp64"],
        "all_list_max_n": 100_000,
        "dim": 2,
        "repeats": 5,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return [_coerce(key, s, kind()) for s in items]
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, list):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentSpec:
    """One experiment's parameters, seed and output directory."""

    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: Path | None = None

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        merged = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS[self.name].items()}
        for k, v in self.params.items():
            if k not in merged:
                raise ConfigError(f"unknown key {k!r} for experiment {self.name!r}")
            merged[k] = v
        self.params = merged
        self.validate()

    def __getitem__(self, key):
        return self.params[key]

    def validate(self) -> None:
        p = self.params
        for key in ("backends",):
            if key in p and (bad := set(p[key]) - set(BACKENDS)):
                raise ConfigError(f"unknown backends {sorted(bad)}")
        if "precisions" in p and (bad := set(p["precisions"]) - set(PRECISIONS)):
            raise ConfigError(f"unknown precisions {sorted(bad)}")
        for key in ("ds_ladder", "dR_ladder", "n_ladder"):
            if key in p and any(v <= 0 for v in p[key]):
                raise ConfigError(f"{key} entries must be positive")
        if "n_ladder" in p and p["n_ladder"] != sorted(p["n_ladder"]):
            raise ConfigError("n_ladder must be sorted ascending")
        if "approaches" in p and (bad := set(p["approaches"]) - {"I", "II", "III"}):
            raise ConfigError(f"unknown approaches {sorted(bad)}")
        if "viscosity" in p and p["viscosity"] not in VISCOSITY_MODELS:
            raise ConfigError(f"viscosity must be one of {VISCOSITY_MODELS}")

    def restrict(self, precision: str | None = None, backend: str | None = None) -> "ExperimentSpec":
        """Narrow the precision and backend lists to one CLI-selected value."""
        if precision is not None and "precisions" in self.params:
            self.params["precisions"] = [precision]
        if backend is not None and "backends" in self.params:
            self.params["backends"] = [backend]
        self.validate()
        return self

    def to_text(self) -> str:
        lines = [f"# sphx {self.name} configuration"]
        lines += [f"{k} = {_format(v)}" for k, v in self.params.items()]
        return "\n".join(lines) + "\n"

    def as_json(self) -> dict:
        return dict(self.params)


def parse_text(text: str, name: str) -> dict:
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS[name]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} for experiment {name!r}")
        out[key] = _coerce(key, raw, DEFAULTS[name][key])
    return out


def load(path, name: str, seed: int = 0, out=None) -> ExperimentSpec:
    params = parse_text(Path(path).read_text(), name) if path is not None else {}
    return ExperimentSpec(name, params, seed=seed, out=None if out is None else Path(out))
