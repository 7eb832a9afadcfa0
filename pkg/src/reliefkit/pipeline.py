"""Manifest-driven batch stages behind the command-line interface."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .errors import DataError
from .features.neighborhood import NeighborhoodParams
from .fileio import atomic_write_text
from .meshio import export_labeled_mesh, load_mesh, read_labels_csv, write_labels_csv
from .metrics import (relevance_from_labels, retrieval_metrics, segmentation_metrics,
                      write_report, write_roc_csv)
from .mesh import build_face_adjacency
from .multiview import mesh_view_descriptor, multiview_matrix
from .retrieval import MembershipMatrix, build_membership_matrix, build_signature
from .segment import (FeatureParams, PropagationConfig, ReferenceBank, SegmenterConfig, build_bank,
                      load_bank, mesh_features, save_bank, segment_mesh)
from .synth.dataset import DatasetConfig, ManifestEntry, generate_dataset, read_catalog, read_manifest

logger = logging.getLogger(__name__)


def write_summary(out: Path, payload: dict) -> Path:
    return atomic_write_text(Path(out) / "summary.json", json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _workers(cfg: RunConfig) -> int:
    w = cfg.get("workers")
    return max(1, int(w if w is not None else (os.cpu_count() or 1)))


def _map(fn, jobs: Sequence, workers: int) -> list:
    """Ordered map, in-process when a single worker is requested."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(fn, jobs, chunksize=1))
    return [fn(j) for j in jobs]


# ------------------------------------------------------------------ generate

def dataset_config(cfg: RunConfig) -> DatasetConfig:
    keys = ("splits", "two_pattern_queries", "resolution", "patterns", "train_only", "unseen",
            "bases", "query_bases", "amplitude", "max_patterns")
    return DatasetConfig.from_profile(cfg.get("profile"), seed=cfg.get("seed"),
                                      **{k: cfg.values.get(k) for k in keys})


def run_generate(cfg: RunConfig, out: Path, resume: bool = False) -> dict:
    dcfg = dataset_config(cfg)
    manifest = generate_dataset(dcfg, out, workers=_workers(cfg), resume=resume)
    entries = read_manifest(manifest)
    counts = {s: sum(e.split == s for e in entries) for s in ("query", "retrieval", "training")}
    summary = {"command": "generate", "config": cfg.effective(), "manifest": "manifest.jsonl",
               "counts": counts, "models": len(entries)}
    write_summary(out, summary)
    return summary


# ------------------------------------------------------------------- segment

def feature_params(cfg: RunConfig) -> FeatureParams:
    return FeatureParams(sample_count=int(cfg.get("sample_count")), seed=int(cfg.get("seed")),
                         neighborhood=NeighborhoodParams(), context_radius=float(cfg.get("context_radius")))


def segmenter_config(cfg: RunConfig) -> SegmenterConfig:
    prop = PropagationConfig(alpha=cfg.get("alpha"), beta=cfg.get("beta"), gamma=cfg.get("gamma"),
                             tau=cfg.get("tau"), max_iterations=cfg.get("max_iterations"),
                             fallback=cfg.get("fallback"))
    return SegmenterConfig(k=cfg.get("neighbors_k"), propagation=prop, adjacency=cfg.get("adjacency"),
                           sample_count=cfg.get("sample_count"), seed=cfg.get("seed"))


def _load_pair(entry: ManifestEntry):
    mesh = load_mesh(entry.path)
    if entry.labels is None or not entry.labels.exists():
        return mesh, None
    lab = read_labels_csv(entry.labels)
    lab.check_length(mesh)
    return mesh, lab


def bank_from_manifest(entries: Sequence[ManifestEntry], cfg: RunConfig, catalog=None) -> ReferenceBank:
    train = [e for e in entries if e.split == "training"]
    if not train:
        raise DataError("manifest has no training models to build a reference bank from")
    meshes, labels = [], []
    for e in train:
        m, lab = _load_pair(e)
        if lab is None:
            raise DataError(f"training model {e.id} has no ground-truth labels")
        meshes.append(m)
        labels.append(lab)
    return build_bank(meshes, labels, feature_params(cfg), max_per_class=cfg.get("max_per_class"),
                      catalog=catalog, seed=cfg.get("seed"))


def _segment_job(args):
    entry, bank, scfg, out, resume, band = args
    path = out / "labels" / f"{entry.id}.csv"
    if resume and path.exists():
        lab = read_labels_csv(path)
        mesh, truth = _load_pair(entry)
    else:
        mesh, truth = _load_pair(entry)
        lab = segment_mesh(mesh, bank, scfg)
        write_labels_csv(path, lab)
    rec = {"id": entry.id, "split": entry.split, "faces": int(mesh.n_faces),
           "labels": f"labels/{entry.id}.csv", "patterns": sorted(lab.pattern_set())}
    if truth is not None:
        sm = segmentation_metrics(lab, truth, build_face_adjacency(mesh), band=band)
        rec.update(accuracy=sm.accuracy, band_accuracy=sm.band_accuracy, mean_iou=sm.mean_iou)
    return rec


def run_segment(cfg: RunConfig, data: Path, out: Path, bank_path: Optional[Path] = None,
                splits: Sequence[str] = ("query", "retrieval"), resume: bool = False) -> dict:
    entries = read_manifest(data)
    catalog = {int(k): v for k, v in read_catalog(Path(data)).get("classes", {}).items()}
    if bank_path is not None:
        bank = load_bank(bank_path)
        bank_file = str(bank_path)
    else:
        target = out / "bank.rkb"
        if resume and target.exists():
            bank = load_bank(target)
        else:
            bank = bank_from_manifest(entries, cfg, catalog)
            save_bank(bank, target)
        bank_file = "bank.rkb"
    scfg = segmenter_config(cfg)
    todo = [e for e in entries if e.split in splits]
    recs = _map(_segment_job, [(e, bank, scfg, out, resume, cfg.get("band")) for e in todo], _workers(cfg))
    lines = [json.dumps(r, sort_keys=True) for r in recs]
    atomic_write_text(out / "segments.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    summary = {"command": "segment", "config": cfg.effective(), "bank": bank_file,
               "models": len(recs), "splits": list(splits), "bank_classes": bank.class_counts(),
               "d_max": bank.d_max}
    accs = [r["accuracy"] for r in recs if "accuracy" in r]
    if accs:
        summary["mean_accuracy"] = float(np.mean(accs))
    write_summary(out, summary)
    return summary


# ------------------------------------------------------------------ retrieve

def _signature_job(args):
    entry, labels_dir, bank, include_plain = args
    mesh = load_mesh(entry.path)
    lab = read_labels_csv(Path(labels_dir) / f"{entry.id}.csv")
    lab.check_length(mesh)
    s, z, _ = mesh_features(mesh, bank)
    return build_signature(lab, s.faces, z, bank.d_max, include_plain=include_plain,
                           allow_empty=True, model_id=entry.id)


def _view_job(args):
    entry, res = args
    return mesh_view_descriptor(load_mesh(entry.path), res)


def run_retrieve(cfg: RunConfig, data: Path, out_csv: Path, labels_dir: Optional[Path] = None,
                 bank_path: Optional[Path] = None, method: Optional[str] = None) -> dict:
    method = method or cfg.get("method")
    entries = read_manifest(data)
    queries = [e for e in entries if e.split == "query"]
    targets = [e for e in entries if e.split == "retrieval"]
    if not queries or not targets:
        raise DataError("manifest needs query and retrieval models")
    workers = _workers(cfg)
    extra = {}
    if method == "signature":
        if labels_dir is None:
            raise DataError("signature retrieval needs --labels (segment output)")
        labels_dir = Path(labels_dir)
        if bank_path is None:
            bank_path = labels_dir.parent / "bank.rkb"
        bank = load_bank(bank_path)
        jobs = [(e, labels_dir, bank, cfg.get("include_plain")) for e in queries + targets]
        sigs = _map(_signature_job, jobs, workers)
        M = build_membership_matrix(sigs[:len(queries)], sigs[len(queries):])
        extra["d_max"] = bank.d_max
    elif method == "multiview":
        res = int(cfg.get("view_resolution"))
        desc = _map(_view_job, [(e, res) for e in queries + targets], workers)
        desc = np.array(desc)
        vals, d_max = multiview_matrix(desc[:len(queries)], desc[len(queries):])
        M = MembershipMatrix(vals, [e.id for e in queries], [e.id for e in targets])
        extra["d_max"] = d_max
    else:
        raise DataError(f"unknown retrieval method {method!r}")
    M.to_csv(out_csv)
    summary = {"command": "retrieve", "method": method, "config": cfg.effective(),
               "membership": out_csv.name, "shape": list(M.shape), **extra}
    atomic_write_text(out_csv.with_suffix(".summary.json"), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


# ------------------------------------------------------------------ evaluate

def _truth_lookup(truth: Path):
    """Map model id -> truth label CSV from a dataset dir, a manifest, or a labels dir."""
    truth = Path(truth)
    manifest = truth / "manifest.jsonl" if truth.is_dir() else truth
    if manifest.name.endswith(".jsonl") and manifest.exists():
        return {e.id: e.labels for e in read_manifest(manifest)}
    if not truth.is_dir():
        raise DataError(f"truth path {truth} is neither a directory nor a manifest")
    return {p.stem: p for p in sorted(truth.glob("*.csv"))}


def run_evaluate(cfg: RunConfig, membership: Path, truth: Path, out: Path) -> dict:
    M = MembershipMatrix.from_csv(membership)
    lookup = _truth_lookup(truth)
    missing = [i for i in M.query_ids + M.target_ids if i not in lookup or lookup[i] is None]
    if missing:
        raise DataError(f"no truth labels for model id(s): {missing[:5]}")
    qlab = [read_labels_csv(lookup[i]) for i in M.query_ids]
    tlab = [read_labels_csv(lookup[i]) for i in M.target_ids]
    R = relevance_from_labels(qlab, tlab)
    metrics = retrieval_metrics(M, R, cutoff=cfg.get("cutoff"))
    write_report(out / "report.jsonl", metrics, M.query_ids)
    write_roc_csv(out / "roc.csv", metrics.roc)
    summary = {"command": "evaluate", "config": cfg.effective(), "membership": Path(membership).name,
               "metrics": metrics.as_dict(), "report": "report.jsonl", "roc": "roc.csv",
               "dropped_queries": [M.query_ids[i] for i in range(len(M.query_ids)) if i not in metrics.kept]}
    write_summary(out, summary)
    return summary


# -------------------------------------------------------------------- export

def run_export(cfg: RunConfig, out: Path, mesh_path: Optional[Path] = None, labels: Optional[Path] = None,
               data: Optional[Path] = None, binary: bool = False) -> dict:
    written = []
    if data is not None:
        if labels is None:
            raise DataError("--data export needs --labels (a directory of label CSVs)")
        for e in read_manifest(data):
            lp = Path(labels) / f"{e.id}.csv"
            if not lp.exists():
                continue
            mesh = load_mesh(e.path)
            export_labeled_mesh(mesh, read_labels_csv(lp), out / f"{e.id}.ply", binary=binary)
            written.append(f"{e.id}.ply")
    else:
        if mesh_path is None or labels is None:
            raise DataError("export needs --mesh and --labels, or --data and --labels")
        mesh = load_mesh(mesh_path)
        lab = read_labels_csv(labels)
        target = out if out.suffix == ".ply" else out / (Path(mesh_path).stem + ".ply")
        export_labeled_mesh(mesh, lab, target, binary=binary)
        written.append(target.name)
        out = target.parent
    summary = {"command": "export", "config": cfg.effective(), "files": written}
    write_summary(out, summary)
    return summary
