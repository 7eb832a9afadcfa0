"""Flat ``key = value`` run configuration with typed keys."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from .errors import DataError

OUT_ENV = "RELIEFKIT_OUT"


def _str_list(text: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in str(text).split(",") if x.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _splits(text: str) -> tuple[int, int, int]:
    parts = tuple(int(x) for x in _str_list(text))
    if len(parts) != 3:
        raise ValueError("expected three comma-separated counts (query,retrieval,training)")
    return parts


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, description); defaults that depend on the profile are None here
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "profile": (str, "desk or full"),
    "seed": (int, "global random seed"),
    "out": (str, "output directory"),
    "workers": (int, "worker processes (default: available CPUs)"),
    # dataset
    "splits": (_splits, "query,retrieval,training model counts"),
    "two_pattern_queries": (int, "queries carrying two patterns"),
    "resolution": (int, "vertex-count target per base surface"),
    "patterns": (_str_list, "pattern classes in catalog order"),
    "train_only": (int, "classes that appear only in training"),
    "unseen": (int, "classes absent from training"),
    "bases": (_str_list, "retrieval/training base ids"),
    "query_bases": (_str_list, "query base ids"),
    "amplitude": (float, "relief amplitude as a fraction of the bbox diagonal"),
    "max_patterns": (int, "most patterns per retrieval/training model"),
    # segmentation
    "sample_count": (int, "faces sampled per mesh"),
    "context_radius": (float, "context radius in mean edge lengths"),
    "neighbors_k": (int, "k of the k-NN classifier"),
    "max_per_class": (int, "bank rows kept per class"),
    "tau": (float, "propagation vote-share threshold"),
    "alpha": (float, "normal-similarity vote weight"),
    "beta": (float, "centroid-distance vote weight"),
    "gamma": (float, "curvature-consistency vote weight"),
    "max_iterations": (int, "propagation iteration cap"),
    "fallback": (str, "global-majority or nearest-labeled"),
    "adjacency": (str, "vertex or edge"),
    # retrieval / evaluation
    "method": (str, "signature or multiview"),
    "view_resolution": (int, "depth image size for multiview"),
    "include_plain": (_bool, "match plain regions too"),
    "cutoff": (int, "e-measure rank cutoff"),
    "band": (int, "boundary band rings for segmentation accuracy"),
}

DEFAULTS: dict[str, Any] = {
    "profile": "desk",
    "seed": 0,
    "workers": None,
    "neighbors_k": 7,
    "max_per_class": 4000,
    "context_radius": 12.0,
    "tau": 0.4,
    "alpha": 1.0,
    "beta": 1.0,
    "gamma": 1.0,
    "max_iterations": 200,
    "fallback": "global-majority",
    "adjacency": "vertex",
    "method": "signature",
    "view_resolution": 128,
    "include_plain": False,
    "cutoff": 32,
    "band": 2,
}

PROFILE_SAMPLES = {"desk": 2000, "full": 20000}


def parse_value(key: str, value) -> Any:
    if key not in SCHEMA:
        raise DataError(f"unknown config key {key!r}")
    if value is None:
        return None
    if not isinstance(value, str):
        return value
    try:
        return SCHEMA[key][0](value.strip())
    except (TypeError, ValueError) as exc:
        raise DataError(f"config key {key!r}: cannot parse {value!r} ({exc})") from None


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{n}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default=None):
        if key not in SCHEMA:
            raise KeyError(key)
        v = self.values.get(key)
        return default if v is None else v

    def __getitem__(self, key):
        return self.get(key)

    def effective(self) -> dict[str, Any]:
        """JSON-friendly view of every set value."""
        out = {}
        for k in sorted(self.values):
            v = self.values[k]
            if v is None:
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def load_config(path=None, command: str = "", overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (flags win)."""
    values = dict(DEFAULTS)
    if path is not None:
        values.update(read_config_file(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = parse_value(k, v)
    if values.get("profile") not in PROFILE_SAMPLES:
        raise DataError(f"unknown profile {values.get('profile')!r}")
    if values.get("sample_count") is None:
        values["sample_count"] = PROFILE_SAMPLES[values["profile"]]
    return RunConfig(command, values)


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "reliefkit-out"))
