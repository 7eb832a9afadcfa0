"""Periodic scalar heightfields in [0, 1] that drive displacement.

Procedural generators work in "cycle" coordinates ``U = f * u + phase``;
one tile spans ``period`` UV units.  Raster sources wrap around their edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DataError
from ..fileio import read_pgm

PATTERNS = ("bumps", "ridges", "bricks", "scales", "weave", "cells", "bark-noise", "constant")

_FLOOR = 0.02  # lowest value of generators that would otherwise have flat zero plateaus


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _bumps(U, V, rng_state):
    return (np.sin(2 * np.pi * U) * np.sin(2 * np.pi * V) + 1.0) / 2.0


def _ridges(U, V, rng_state):
    return (np.sin(2 * np.pi * U) + 1.0) / 2.0


def _bricks(U, V, rng_state):
    row = np.floor(2.0 * V)
    x = np.mod(U + 0.5 * np.mod(row, 2.0), 1.0)
    y = np.mod(2.0 * V, 1.0)
    # distance to mortar in brick-height units (brick is 1 x 0.5 cycles)
    d = np.minimum(np.minimum(x, 1.0 - x) * 2.0, np.minimum(y, 1.0 - y))
    return _FLOOR + (1.0 - _FLOOR) * _smoothstep(0.04, 0.18, d)


def _scales(U, V, rng_state):
    R = 0.6
    j0 = np.floor(2.0 * V)
    best_row = np.full(U.shape, -np.inf)
    h = np.full(U.shape, _FLOOR)
    for dj in (-1.0, 0.0, 1.0, 2.0):
        j = j0 + dj
        off = 0.5 * np.mod(j, 2.0)
        i0 = np.floor(U - off)
        for di in (-1.0, 0.0, 1.0, 2.0):
            cx = i0 + di + off
            cy = j / 2.0
            d = np.hypot(U - cx, V - cy) / R
            # a scale overlaps the rows below it: the highest covering row wins
            hit = (d < 1.0) & (j > best_row)
            best_row = np.where(hit, j, best_row)
            h = np.where(hit, _FLOOR + (1.0 - _FLOOR) * d ** 1.5, h)
    return h


def _weave(U, V, rng_state):
    a = np.floor(2.0 * U)
    b = np.floor(2.0 * V)
    x = np.mod(2.0 * U, 1.0)
    y = np.mod(2.0 * V, 1.0)
    horiz = np.mod(a + b, 2.0) == 0
    across = np.where(horiz, y, x)
    along = np.where(horiz, x, y)
    profile = np.sin(np.pi * across)
    bulge = 0.55 + 0.45 * np.sin(np.pi * along)
    return _FLOOR + (1.0 - _FLOOR) * profile * bulge


def _cells(U, V, rng_state):
    pts = rng_state["points"]  # (K, K, 2) jitter inside each cell
    K = pts.shape[0]
    ci, cj = np.floor(U), np.floor(V)
    d1 = np.full(U.shape, np.inf)
    d2 = np.full(U.shape, np.inf)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ii, jj = ci + di, cj + dj
            p = pts[np.mod(ii, K).astype(np.int64), np.mod(jj, K).astype(np.int64)]
            d = np.hypot(U - (ii + p[..., 0]), V - (jj + p[..., 1]))
            d2 = np.where(d < d1, d1, np.minimum(d2, d))
            d1 = np.minimum(d1, d)
    return _FLOOR + (1.0 - _FLOOR) * _smoothstep(0.0, 0.45, d2 - d1)


def _hash_lattice(ix, iy, seed):
    """Deterministic pseudo-random value in [0, 1) per integer lattice point."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ np.uint64(seed) * np.uint64(0x165667B19E3779F9))
    h ^= h >> np.uint64(31)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(29)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(x, y, seed):
    ix, iy = np.floor(x), np.floor(y)
    fx, fy = x - ix, y - iy
    ix, iy = ix.astype(np.int64), iy.astype(np.int64)
    sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    with np.errstate(over="ignore"):
        a = _hash_lattice(ix, iy, seed)
        b = _hash_lattice(ix + 1, iy, seed)
        c = _hash_lattice(ix, iy + 1, seed)
        d = _hash_lattice(ix + 1, iy + 1, seed)
    return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy


def _bark_raw(U, V, seed):
    # vertical furrows: fine across u, stretched along v
    total = np.zeros_like(U)
    amp, freq = 1.0, 1.0
    for octave in range(4):
        total += amp * _value_noise(U * freq, V * freq * 0.25, seed + octave)
        amp *= 0.5
        freq *= 2.0
    return total


def _mirror(x, L):
    m = np.mod(x, 2.0 * L)
    return L - np.abs(m - L)


def _bark(U, V, rng_state):
    L = rng_state["extent"]
    raw = _bark_raw(_mirror(U, L), _mirror(V, L), rng_state["seed"])
    lo, hi = rng_state["range"]
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def _constant(U, V, rng_state):
    return np.full(np.broadcast(U, V).shape, rng_state["value"])


_GENERATORS: dict[str, Callable] = {
    "bumps": _bumps, "ridges": _ridges, "bricks": _bricks, "scales": _scales,
    "weave": _weave, "cells": _cells, "bark-noise": _bark, "constant": _constant,
}

_CELLS_K = 4
_BARK_EXTENT = 6.0


@dataclass(eq=False)
class HeightField:
    """Heightfield sampled at UV coordinates.

    ``period`` is the tiling period in UV units: ``sample(u + period, v) ==
    sample(u, v)`` up to rounding.
    """

    kind: str
    frequency: float = 1.0
    phase: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    period: float = 1.0
    raster: np.ndarray | None = None
    _state: dict = field(default_factory=dict, repr=False)

    def sample(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "raster":
            return self._sample_raster(u, v)
        U = u * self.frequency + self.phase[0]
        V = v * self.frequency + self.phase[1]
        return _GENERATORS[self.kind](U, V, self._state)

    def _sample_raster(self, u, v):
        img = self.raster
        H, W = img.shape
        x = np.mod(u / self.period, 1.0) * W - 0.5
        y = np.mod(v / self.period, 1.0) * H - 0.5
        x0, y0 = np.floor(x), np.floor(y)
        fx, fy = x - x0, y - y0
        x0 = x0.astype(np.int64) % W
        y0 = y0.astype(np.int64) % H
        x1, y1 = (x0 + 1) % W, (y0 + 1) % H
        top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
        bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
        return np.clip(top * (1 - fy) + bot * fy, 0.0, 1.0)

    def grid(self, n: int = 128) -> np.ndarray:
        """Samples over one period on an n x n lattice (for inspection / PGM)."""
        t = np.arange(n) * (self.period / n)
        U, V = np.meshgrid(t, t, indexing="xy")
        return self.sample(U, V)


def make_heightfield(pattern: str, frequency: float = 8.0, phase=(0.0, 0.0), seed: int = 0,
                     value: float = 1.0) -> HeightField:
    """Create a procedural heightfield.

    ``frequency`` counts pattern cycles per UV unit.  ``cells`` tiles every
    4 cycles (jittered feature points), ``bark-noise`` is aperiodic inside a
    6-cycle window and tiled by mirroring; the rest tile every cycle.
    """
    if pattern not in _GENERATORS:
        raise DataError(f"unknown pattern {pattern!r}")
    if not frequency > 0:
        raise DataError("frequency must be positive")
    phase = (float(phase[0]), float(phase[1]))
    hf = HeightField(pattern, float(frequency), phase, int(seed), period=1.0 / frequency)
    if pattern == "cells":
        rng = np.random.default_rng(seed)
        hf._state["points"] = 0.15 + 0.7 * rng.random((_CELLS_K, _CELLS_K, 2))
        hf.period = _CELLS_K / frequency
    elif pattern == "bark-noise":
        hf._state.update(seed=int(seed) * 7919, extent=_BARK_EXTENT)
        t = np.linspace(0.0, _BARK_EXTENT, 257)
        U, V = np.meshgrid(t, t)
        raw = _bark_raw(U, V, hf._state["seed"])
        hf._state["range"] = (float(raw.min()), float(raw.max()))
        hf.period = 2.0 * _BARK_EXTENT / frequency
    elif pattern == "constant":
        if not 0.0 <= value <= 1.0:
            raise DataError("constant heightfield value must lie in [0, 1]")
        hf._state["value"] = float(value)
    return hf


def heightfield_from_array(values, period: float = 1.0) -> HeightField:
    img = np.asarray(values, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DataError("raster heightfield must be a non-empty 2D array")
    if period <= 0:
        raise DataError("period must be positive")
    return HeightField("raster", period=float(period), raster=np.clip(img, 0.0, 1.0))


def heightfield_from_pgm(path, period: float = 1.0) -> HeightField:
    return heightfield_from_array(read_pgm(path), period)
