"""OBJ / PLY reading and writing, labeled exports and label CSV files."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, MeshFormatError
from .fileio import FLOAT_FMT, atomic_write_bytes, atomic_write_text, format_rows
from .mesh import PatternLabeling, TriangleMesh

logger = logging.getLogger(__name__)

# Fixed face palette. Entry 0 (neutral gray) is reserved for label 0; label
# l > 0 maps to entry 1 + (l - 1) % 15, so up to 15 patterns round-trip.
PALETTE = np.array([
    (128, 128, 128),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
    (128, 0, 0),
    (0, 0, 128),
], dtype=np.uint8)


def label_colors(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.where(labels > 0, 1 + (labels - 1) % (len(PALETTE) - 1), 0)
    return PALETTE[idx]


def colors_to_labels(colors) -> np.ndarray:
    """Inverse palette lookup; unknown colors raise."""
    colors = np.asarray(colors, dtype=np.int64)
    key = (colors[:, 0] << 16) | (colors[:, 1] << 8) | colors[:, 2]
    pal = PALETTE.astype(np.int64)
    pal_key = (pal[:, 0] << 16) | (pal[:, 1] << 8) | pal[:, 2]
    order = np.argsort(pal_key)
    pos = np.searchsorted(pal_key[order], key)
    pos = np.clip(pos, 0, len(pal_key) - 1)
    hit = pal_key[order][pos] == key
    if not np.all(hit):
        raise DataError("face color not in palette")
    return order[pos]


# ---------------------------------------------------------------- OBJ

def _obj_index(tok: str, n: int) -> int:
    i = int(tok)
    return i - 1 if i > 0 else n + i


def read_obj(path) -> dict:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    verts, norms, texs = [], [], []
    faces, fnorm, ftex = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                texs.append([float(x) for x in parts[1:3]])
            elif tag == "f":
                corners = parts[1:]
                if len(corners) != 3:
                    raise MeshFormatError(f"{path}:{lineno}: non-triangular face ({len(corners)} vertices)")
                vi, ti, ni = [], [], []
                for c in corners:
                    sub = c.split("/")
                    vi.append(_obj_index(sub[0], len(verts)))
                    ti.append(_obj_index(sub[1], len(texs)) if len(sub) > 1 and sub[1] else -1)
                    ni.append(_obj_index(sub[2], len(norms)) if len(sub) > 2 and sub[2] else -1)
                faces.append(vi)
                ftex.append(ti)
                fnorm.append(ni)
        except MeshFormatError:
            raise
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{lineno}: malformed record") from exc
    V = len(verts)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= V):
        raise MeshFormatError(f"{path}: face index out of range")
    out = {"vertices": np.array(verts, dtype=np.float64).reshape(-1, 3), "faces": faces}
    for key, table, fidx, dim in (("normals", norms, fnorm, 3), ("uvs", texs, ftex, 2)):
        if not table:
            continue
        fidx = np.array(fidx, dtype=np.int64).reshape(-1, 3)
        if np.any(fidx < 0):
            continue
        table = np.array(table, dtype=np.float64).reshape(-1, dim)
        if fidx.max() >= len(table):
            raise MeshFormatError(f"{path}: {key} index out of range")
        per_vertex = np.zeros((V, dim))
        # first corner referencing a vertex wins
        vflat, tflat = faces.ravel()[::-1], fidx.ravel()[::-1]
        per_vertex[vflat] = table[tflat]
        out[key] = per_vertex
    return out


def write_obj(path, mesh: TriangleMesh) -> Path:
    parts = [format_rows(mesh.vertices, "v " + " ".join([FLOAT_FMT] * 3))]
    if mesh.uvs is not None:
        parts.append(format_rows(mesh.uvs, "vt " + " ".join([FLOAT_FMT] * 2)))
    if mesh.normals is not None:
        parts.append(format_rows(mesh.normals, "vn " + " ".join([FLOAT_FMT] * 3)))
    f = mesh.faces + 1
    if mesh.uvs is not None and mesh.normals is not None:
        rows = np.repeat(f, 3, axis=1)
        parts.append(format_rows(rows, "f %d/%d/%d %d/%d/%d %d/%d/%d"))
    elif mesh.uvs is not None:
        parts.append(format_rows(np.repeat(f, 2, axis=1), "f %d/%d %d/%d %d/%d"))
    elif mesh.normals is not None:
        parts.append(format_rows(np.repeat(f, 2, axis=1), "f %d//%d %d//%d %d//%d"))
    else:
        parts.append(format_rows(f, "f %d %d %d"))
    return atomic_write_text(path, "".join(parts))


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: not a PLY file")
    nl = data.find(b"\n", end)
    body_start = nl + 1 if nl >= 0 else len(data)
    fmt = None
    elements = []
    for line in data[:end].decode("ascii", "replace").splitlines()[1:]:
        p = line.split()
        if not p or p[0] in ("comment", "obj_info"):
            continue
        if p[0] == "format":
            fmt = p[1]
        elif p[0] == "element":
            elements.append({"name": p[1], "count": int(p[2]), "props": []})
        elif p[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}: property before element")
            if p[1] == "list":
                elements[-1]["props"].append((p[4], "list", _PLY_TYPES[p[2]], _PLY_TYPES[p[3]]))
            else:
                elements[-1]["props"].append((p[2], "scalar", _PLY_TYPES[p[1]], None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements, body_start


def _ply_ascii(tokens, pos, el, path):
    names = {}
    cols = {name: [] for name, *_ in el["props"]}
    for _ in range(el["count"]):
        for name, kind, t, t2 in el["props"]:
            if kind == "scalar":
                cols[name].append(float(tokens[pos]))
                pos += 1
            else:
                n = int(tokens[pos])
                cols[name].append([float(x) for x in tokens[pos + 1:pos + 1 + n]])
                pos += 1 + n
    for name, kind, *_ in el["props"]:
        names[name] = cols[name] if kind == "list" else np.array(cols[name])
    return names, pos


def _ply_binary(data, pos, el, endian, path):
    fields = []
    for name, kind, t, t2 in el["props"]:
        if kind == "scalar":
            fields.append((name, endian + t))
        else:
            fields.append((name + "__n", endian + t))
            fields.append((name, endian + t2, (3,)))
    dt = np.dtype(fields)
    need = dt.itemsize * el["count"]
    if pos + need > len(data):
        raise MeshFormatError(f"{path}: truncated binary PLY body")
    rec = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
    out = {}
    for name, kind, *_ in el["props"]:
        if kind == "list":
            if np.any(rec[name + "__n"] != 3):
                raise MeshFormatError(f"{path}: non-triangular face")
        out[name] = np.array(rec[name])
    return out, pos + need


def read_ply(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    fmt, elements, pos = _parse_ply_header(data, path)
    parsed = {}
    if fmt == "ascii":
        tokens = data[pos:].split()
        tpos = 0
        try:
            for el in elements:
                parsed[el["name"]], tpos = _ply_ascii(tokens, tpos, el, path)
        except (IndexError, ValueError) as exc:
            raise MeshFormatError(f"{path}: malformed ASCII PLY body") from exc
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        for el in elements:
            if any(k == "list" for _, k, *_ in el["props"]) and el["name"] != "face":
                raise MeshFormatError(f"{path}: list property on element {el['name']!r} unsupported")
            parsed[el["name"]], pos = _ply_binary(data, pos, el, endian, path)
    if "vertex" not in parsed:
        raise MeshFormatError(f"{path}: no vertex element")
    vx = parsed["vertex"]
    out = {"vertices": np.stack([vx["x"], vx["y"], vx["z"]], axis=1).astype(np.float64)}
    if all(k in vx for k in ("nx", "ny", "nz")):
        out["normals"] = np.stack([vx["nx"], vx["ny"], vx["nz"]], axis=1).astype(np.float64)
    for ku, kv in (("u", "v"), ("s", "t"), ("texture_u", "texture_v")):
        if ku in vx and kv in vx:
            out["uvs"] = np.stack([vx[ku], vx[kv]], axis=1).astype(np.float64)
            break
    fc = parsed.get("face", {})
    key = "vertex_indices" if "vertex_indices" in fc else "vertex_index" if "vertex_index" in fc else None
    if key is None:
        out["faces"] = np.zeros((0, 3), dtype=np.int64)
    else:
        lst = fc[key]
        if isinstance(lst, list):
            if any(len(f) != 3 for f in lst):
                raise MeshFormatError(f"{path}: non-triangular face")
            lst = np.array(lst, dtype=np.float64).reshape(-1, 3)
        out["faces"] = np.asarray(lst).astype(np.int64).reshape(-1, 3)
    if out["faces"].size and (out["faces"].min() < 0 or out["faces"].max() >= len(out["vertices"])):
        raise MeshFormatError(f"{path}: face index out of range")
    if all(k in fc for k in ("red", "green", "blue")):
        out["face_colors"] = np.stack([fc["red"], fc["green"], fc["blue"]], axis=1).astype(np.uint8)
    return out


def write_ply(path, mesh: TriangleMesh, face_colors: Optional[np.ndarray] = None,
              binary: bool = False) -> Path:
    """Write PLY; ASCII output uses fixed float formatting for reproducibility."""
    vprops = [("x", "double"), ("y", "double"), ("z", "double")]
    vcols = [mesh.vertices]
    if mesh.normals is not None:
        vprops += [("nx", "double"), ("ny", "double"), ("nz", "double")]
        vcols.append(mesh.normals)
    if mesh.uvs is not None:
        vprops += [("u", "double"), ("v", "double")]
        vcols.append(mesh.uvs)
    vdata = np.hstack(vcols)
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {mesh.n_vertices}"]
    head += [f"property {t} {n}" for n, t in vprops]
    head += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices"]
    if face_colors is not None:
        face_colors = np.asarray(face_colors, dtype=np.uint8)
        if len(face_colors) != mesh.n_faces:
            raise DataError("face color count does not match face count")
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if binary:
        vbytes = vdata.astype("<f8").tobytes()
        fields = [("n", "u1"), ("idx", "<i4", (3,))]
        if face_colors is not None:
            fields += [("rgb", "u1", (3,))]
        rec = np.zeros(mesh.n_faces, dtype=np.dtype(fields))
        rec["n"] = 3
        rec["idx"] = mesh.faces
        if face_colors is not None:
            rec["rgb"] = face_colors
        body = vbytes + rec.tobytes()
    else:
        vtxt = format_rows(vdata, " ".join([FLOAT_FMT] * vdata.shape[1]))
        if face_colors is not None:
            frows = np.hstack([np.full((mesh.n_faces, 1), 3), mesh.faces, face_colors.astype(np.int64)])
            ftxt = format_rows(frows, "%d %d %d %d %d %d %d")
        else:
            frows = np.hstack([np.full((mesh.n_faces, 1), 3), mesh.faces])
            ftxt = format_rows(frows, "%d %d %d %d")
        body = (vtxt + ftxt).encode("ascii")
    return atomic_write_bytes(path, header + body)


# ---------------------------------------------------------------- public API

def _detect_format(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("obj", "ply"):
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    return fmt


def _read_raw(path, fmt):
    fmt = _detect_format(path, fmt)
    return read_obj(path) if fmt == "obj" else read_ply(path)


def load_mesh(path, format: Optional[str] = None) -> TriangleMesh:
    """Read an OBJ or PLY file and drop degenerate faces.

    The number of removed faces is available as ``mesh.dropped_faces``.
    """
    raw = _read_raw(path, format)
    mesh = TriangleMesh(raw["vertices"], raw["faces"], raw.get("normals"), raw.get("uvs"))
    out = mesh.validated()
    if out.dropped_faces:
        logger.warning("%s: dropped %d degenerate face(s)", path, out.dropped_faces)
    return out


def load_labeled_mesh(path) -> tuple[TriangleMesh, PatternLabeling]:
    """Read a colored PLY written by :func:`export_labeled_mesh`.

    Labels are recovered through the palette (palette index == label for
    labels up to 15).
    """
    raw = read_ply(path)
    if "face_colors" not in raw:
        raise MeshFormatError(f"{path}: no face colors")
    mesh = TriangleMesh(raw["vertices"], raw["faces"], raw.get("normals"), raw.get("uvs"))
    keep = mesh.nondegenerate_mask()
    labels = colors_to_labels(raw["face_colors"][keep])
    return mesh.validated(), PatternLabeling(labels)


def save_mesh(path, mesh: TriangleMesh, format: Optional[str] = None) -> Path:
    fmt = _detect_format(path, format)
    return write_obj(path, mesh) if fmt == "obj" else write_ply(path, mesh)


def export_labeled_mesh(mesh: TriangleMesh, labeling: PatternLabeling, path,
                        binary: bool = False) -> Path:
    """Write a PLY whose faces are colored by label (0 -> gray)."""
    labeling.check_length(mesh)
    return write_ply(path, mesh, label_colors(labeling.labels), binary=binary)


def write_labels_csv(path, labeling: PatternLabeling) -> Path:
    n = len(labeling.labels)
    ids = np.arange(n)
    if labeling.confidence is not None:
        rows = "".join(f"{i},{l},{c:.6f}\n" for i, l, c in zip(ids, labeling.labels, labeling.confidence))
        return atomic_write_text(path, "face_id,label,confidence\n" + rows)
    body = format_rows(np.stack([ids, labeling.labels], axis=1), "%d,%d")
    return atomic_write_text(path, "face_id,label\n" + body)


def read_labels_csv(path) -> PatternLabeling:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    header = lines[0].split(",") if lines else []
    if header[:2] != ["face_id", "label"]:
        raise DataError(f"{path}: expected header face_id,label[,confidence]")
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        return PatternLabeling(np.zeros(0, dtype=np.int64))
    try:
        arr = np.array([ln.split(",") for ln in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed label row") from exc
    ids = arr[:, 0].astype(np.int64)
    if not np.array_equal(ids, np.arange(len(ids))):
        raise DataError(f"{path}: face ids must be 0..F-1 in order")
    conf = arr[:, 2] if arr.shape[1] > 2 else None
    return PatternLabeling(arr[:, 1].astype(np.int64), conf)

