"""Generate query / retrieval / training splits of relief-patterned meshes."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError
from ..fileio import atomic_write_text
from ..meshio import write_labels_csv, write_ply
from .bases import BASE_CATALOG, QUERY_BASES, RETRIEVAL_BASES, make_named_base
from .heightfield import make_heightfield
from .regions import plan_regions
from .relief import apply_relief

logger = logging.getLogger(__name__)

SPLITS = ("query", "retrieval", "training")

# name -> (generator, frequency in cycles per UV unit, generator seed)
PATTERN_CATALOG: dict[str, tuple[str, float, int]] = {
    "bumps": ("bumps", 6.0, 0),
    "ridges": ("ridges", 6.0, 0),
    "bricks": ("bricks", 4.0, 0),
    "scales": ("scales", 5.0, 0),
    "weave": ("weave", 4.0, 0),
    "cells": ("cells", 5.0, 11),
    "bark": ("bark-noise", 3.0, 5),
    "bumps-fine": ("bumps", 11.0, 0),
    "ridges-fine": ("ridges", 11.0, 0),
    "bricks-fine": ("bricks", 7.0, 0),
    "scales-fine": ("scales", 9.0, 0),
    "weave-fine": ("weave", 7.0, 0),
    "cells-fine": ("cells", 9.0, 23),
    "bark-fine": ("bark-noise", 6.0, 17),
    "bumps-coarse": ("bumps", 3.5, 0),
    "ridges-coarse": ("ridges", 3.5, 0),
    "bricks-coarse": ("bricks", 2.5, 0),
    "cells-coarse": ("cells", 3.0, 31),
    "weave-coarse": ("weave", 2.5, 0),
}

PROFILES: dict[str, dict] = {
    "desk": dict(
        splits=(5, 30, 70), two_pattern_queries=4, resolution=10_000,
        patterns=("bumps", "ridges", "bricks", "scales", "weave", "cells", "bark", "bumps-fine"),
        train_only=1, unseen=1,
    ),
    "full": dict(
        splits=(54, 300, 700), two_pattern_queries=40, resolution=100_000,
        patterns=tuple(PATTERN_CATALOG), train_only=5, unseen=4,
    ),
}


@dataclass(frozen=True)
class DatasetConfig:
    """Dataset recipe.

    Patterns are partitioned in catalog order: the first classes are shared
    by all splits, then ``train_only`` classes appear only in training, and
    the last ``unseen`` classes appear only in query and retrieval models.
    ``amplitude`` is a fraction of each base's bounding-box diagonal.
    """

    profile: str = "desk"
    seed: int = 0
    splits: tuple[int, int, int] = (5, 30, 70)
    two_pattern_queries: int = 4
    resolution: int = 10_000
    patterns: tuple[str, ...] = PROFILES["desk"]["patterns"]
    train_only: int = 1
    unseen: int = 1
    query_bases: tuple[str, ...] = QUERY_BASES
    bases: tuple[str, ...] = RETRIEVAL_BASES
    amplitude: float = 0.02
    max_patterns: int = 3

    @classmethod
    def from_profile(cls, profile: str = "desk", **overrides) -> "DatasetConfig":
        if profile not in PROFILES:
            raise DataError(f"unknown profile {profile!r}")
        kw = dict(PROFILES[profile])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(profile=profile, **kw)

    def pattern_partition(self):
        """(shared, train_only, unseen) class-name tuples."""
        p = list(self.patterns)
        unknown = [x for x in p if x not in PATTERN_CATALOG]
        if unknown:
            raise DataError(f"unknown pattern class(es) {unknown}")
        if len(set(p)) != len(p):
            raise DataError("duplicate pattern classes")
        if self.train_only < 0 or self.unseen < 0:
            raise DataError("split-exclusive class counts must be non-negative")
        n_shared = len(p) - self.train_only - self.unseen
        if n_shared < 1:
            raise DataError(
                f"catalog of {len(p)} classes is smaller than the requested partition "
                f"({self.train_only} training-only + {self.unseen} unseen + at least 1 shared)")
        return (tuple(p[:n_shared]), tuple(p[n_shared:n_shared + self.train_only]),
                tuple(p[n_shared + self.train_only:]))

    def validate(self):
        shared, train_only, unseen = self.pattern_partition()
        q, r, t = self.splits
        if min(q, r, t) < 0:
            raise DataError("split sizes must be non-negative")
        if not 0 <= self.two_pattern_queries <= q:
            raise DataError("two_pattern_queries must lie in [0, query count]")
        if self.two_pattern_queries and len(shared) + len(unseen) < 2:
            raise DataError("two-pattern queries need at least two query classes")
        for b in tuple(self.bases) + tuple(self.query_bases):
            if b not in BASE_CATALOG:
                raise DataError(f"unknown base id {b!r}")
        if not self.bases or not self.query_bases:
            raise DataError("base lists must be nonempty")
        if self.amplitude < 0:
            raise DataError("amplitude must be non-negative")
        if self.max_patterns < 1:
            raise DataError("max_patterns must be at least 1")
        return self


def pattern_ids(config: DatasetConfig) -> dict[str, int]:
    """Global class ids (1-based) in configured catalog order."""
    return {name: i + 1 for i, name in enumerate(config.patterns)}


@dataclass
class ModelSpec:
    id: str
    split: str
    base: str
    patterns: list[str]
    regions: int
    assignment: dict[int, str] = field(default_factory=dict)  # region -> class name ("" = plain)
    strategy: str = "axis-split"
    uv_mode: str = "stored"
    phase: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    amplitude: float = 0.0


def _uv_mode(base: str) -> str:
    kind = BASE_CATALOG[base][0]
    return "stored" if kind in ("grid", "wavy-grid", "folded-sheet") else "triplanar"


def plan_dataset(config: DatasetConfig) -> list[ModelSpec]:
    """Deterministic per-model recipes, in manifest order."""
    config.validate()
    shared, train_only, unseen = config.pattern_partition()
    pools = {
        "query": list(shared + unseen),
        "retrieval": list(shared + unseen),
        "training": list(shared + train_only),
    }
    specs = []
    for s, split in enumerate(SPLITS):
        count = config.splits[s]
        pool = pools[split]
        for i in range(count):
            rng = np.random.default_rng([config.seed, s, i])
            if split == "query":
                base = config.query_bases[i % len(config.query_bases)]
                n_pat = 2 if i < config.two_pattern_queries else 1
                plain = 0
            else:
                base = config.bases[i % len(config.bases)]
                n_pat = int(rng.integers(1, min(config.max_patterns, len(pool)) + 1))
                plain = int(rng.integers(2))
            chosen = [pool[j] for j in sorted(rng.choice(len(pool), size=min(n_pat, len(pool)), replace=False))]
            # make sure every class of a split shows up when the split is large enough
            if split != "query" and i < len(pool) and pool[i] not in chosen:
                chosen[0] = pool[i]
                chosen = sorted(set(chosen), key=pool.index)
            k = len(chosen) + plain
            slots = list(chosen) + [""] * plain
            order = rng.permutation(k)
            assignment = {int(r): slots[int(order[r])] for r in range(k)}
            specs.append(ModelSpec(
                id=f"{split[0]}{i:04d}", split=split, base=base, patterns=chosen, regions=k,
                assignment=assignment,
                strategy="axis-split" if k <= 2 else "geodesic-seeds",
                uv_mode=_uv_mode(base),
                phase=(float(rng.random()), float(rng.random())),
                seed=int(rng.integers(2 ** 31)),
                amplitude=float(config.amplitude),
            ))
    return specs


def build_model(spec: ModelSpec, config: DatasetConfig):
    """Synthesize one model from its recipe; returns (mesh, labeling)."""
    ids = pattern_ids(config)
    base = make_named_base(spec.base, config.resolution)
    mask = plan_regions(base, spec.regions, seed=spec.seed, strategy=spec.strategy)
    fields = {}
    for name in spec.patterns:
        gen, freq, gseed = PATTERN_CATALOG[name]
        fields[ids[name]] = make_heightfield(gen, freq, phase=spec.phase, seed=gseed)
    assignment = {r: (ids[n] if n else 0) for r, n in spec.assignment.items()}
    catalog = {v: k for k, v in ids.items()}
    amp = spec.amplitude * base.bbox_diagonal
    return apply_relief(base, mask, assignment, fields, amp, uv_mode=spec.uv_mode, catalog=catalog)


def _write_model(args):
    spec, config, out, resume = args
    mesh_path = out / "meshes" / f"{spec.id}.ply"
    label_path = out / "labels" / f"{spec.id}.csv"
    if resume and mesh_path.exists() and label_path.exists():
        return spec.id, None
    mesh, labeling = build_model(spec, config)
    write_ply(mesh_path, mesh)
    write_labels_csv(label_path, labeling)
    return spec.id, mesh.n_faces


def manifest_record(spec: ModelSpec, config: DatasetConfig) -> dict:
    ids = pattern_ids(config)
    return {
        "id": spec.id,
        "path": f"meshes/{spec.id}.ply",
        "labels": f"labels/{spec.id}.csv",
        "base": spec.base,
        "split": spec.split,
        "patterns": [ids[p] for p in spec.patterns],
        "assignment": {str(r): (ids[n] if n else 0) for r, n in sorted(spec.assignment.items())},
        "amplitude": spec.amplitude,
        "uv": spec.uv_mode,
        "seed": spec.seed,
    }


def generate_dataset(config: DatasetConfig, out, workers: int = 1, resume: bool = False) -> Path:
    """Write meshes, label CSVs, ``catalog.json`` and ``manifest.jsonl`` under ``out``.

    Models are independent and may be built by a process pool; the manifest
    is always written in recipe order.
    """
    out = Path(out)
    specs = plan_dataset(config)
    jobs = [(s, config, out, resume) for s in specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_write_model, jobs, chunksize=1))
    else:
        for job in jobs:
            _write_model(job)
    ids = pattern_ids(config)
    shared, train_only, unseen = config.pattern_partition()
    catalog = {
        "classes": {str(v): k for k, v in ids.items()},
        "shared": [ids[p] for p in shared],
        "train_only": [ids[p] for p in train_only],
        "unseen": [ids[p] for p in unseen],
        "config": config_to_dict(config),
    }
    atomic_write_text(out / "catalog.json", json.dumps(catalog, indent=1, sort_keys=True) + "\n")
    lines = [json.dumps(manifest_record(s, config), sort_keys=True) for s in specs]
    path = atomic_write_text(out / "manifest.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    logger.info("wrote %d models to %s", len(specs), out)
    return path


def config_to_dict(config: DatasetConfig) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ------------------------------------------------------------ manifest reading

@dataclass
class ManifestEntry:
    id: str
    path: Path
    labels: Optional[Path]
    split: str
    patterns: list[int]
    base: str = ""
    record: dict = field(default_factory=dict)


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    entries, seen = [], set()
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            eid = str(rec["id"])
            mesh_path = root / rec["path"]
            split = rec["split"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest {path} line {n}: {exc}") from exc
        if split not in SPLITS:
            raise DataError(f"malformed manifest {path} line {n}: unknown split {split!r}")
        if eid in seen:
            raise DataError(f"malformed manifest {path}: duplicate id {eid!r}")
        seen.add(eid)
        labels = root / rec["labels"] if rec.get("labels") else None
        entries.append(ManifestEntry(eid, mesh_path, labels, split,
                                     [int(p) for p in rec.get("patterns", [])],
                                     rec.get("base", ""), rec))
    return entries


def read_catalog(root) -> dict:
    p = Path(root) / "catalog.json"
    if not p.exists():
        return {}
    try:
        return json.loads(p.read_text())
    except ValueError as exc:
        raise DataError(f"malformed catalog {p}: {exc}") from exc


def entries_by_split(entries: Sequence[ManifestEntry], split: str) -> list[ManifestEntry]:
    return [e for e in entries if e.split == split]


__all__ = ["PATTERN_CATALOG", "PROFILES", "DatasetConfig", "ModelSpec", "plan_dataset",
           "build_model", "generate_dataset", "read_manifest", "read_catalog"]
