"""Random porous skeleton: i.i.d. cubic obstacles on the integer lattice.

The solid phase is a union of closed cubes ``z + W`` over occupied lattice
cells, with ``W = w * [-1/2, 1/2]^d`` strictly inside the unit cell.  Cell
occupancy is a pure function of ``(seed, z)``, so the field is defined on all
of ``Z^d`` and identical seeds reproduce identical fields bit for bit,
independent of iteration order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ObstacleShape",
    "SkeletonField",
    "SkeletonFormatError",
    "generate_skeleton",
    "low_occupancy_blocks",
    "tau_for",
]

_U64 = np.uint64
_MIX1 = _U64(0x9E3779B97F4A7C15)
_MIX2 = _U64(0xBF58476D1CE4E5B9)
_MIX3 = _U64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer (uint64 in, uint64 out)."""
    with np.errstate(over="ignore"):
        x = (x + _MIX1).astype(_U64)
        x = ((x ^ (x >> _U64(30))) * _MIX2).astype(_U64)
        x = ((x ^ (x >> _U64(27))) * _MIX3).astype(_U64)
        return x ^ (x >> _U64(31))


def _cell_bits(seed: int, axes: list[np.ndarray]) -> np.ndarray:
    """Per-cell uint64 hash over the lattice rectangle spanned by ``axes``.

    ``axes[j]`` holds the integer lattice coordinates along axis j; the result
    has shape ``(len(axes[0]), ..., len(axes[d-1]))``.  Chaining one SplitMix
    round per axis keeps the draw a pure function of (seed, z).
    """
    h = _splitmix64(np.asarray([seed], dtype=np.int64).view(_U64))
    d = len(axes)
    for j, ax in enumerate(axes):
        zb = np.asarray(ax, dtype=np.int64).view(_U64)
        shape = [1] * d
        shape[j] = zb.size
        with np.errstate(over="ignore"):
            h = _splitmix64(h ^ zb.reshape(shape))
    return h


def tau_for(t: float, d: int) -> float:
    """Scaling factor tau = (ln t)^(-1/d) between original and scaled frames."""
    return math.log(t) ** (-1.0 / d)


class SkeletonFormatError(ValueError):
    """Raised when a serialized skeleton descriptor is malformed."""


@dataclass(frozen=True)
class ObstacleShape:
    """Centered closed cube of edge ``side`` placed inside each occupied cell."""

    side: float

    def __post_init__(self):
        if not 0.0 < self.side < 1.0:
            raise ValueError(f"obstacle side must lie in (0, 1), got {self.side}")

    def volume(self, d: int) -> float:
        return self.side**d


@dataclass
class SkeletonField:
    """Binary obstacle field with per-cell occupancy bits and xi = eps * |W|.

    ``occupancy`` caches the window of cells intersecting the open box
    ``(-t/2, t/2)^d``; bits for cells outside the window are recomputed from
    (seed, z) on demand, so the field behaves as defined on all of Z^d.
    """

    dimension: int
    box_side: float
    p: float
    shape: ObstacleShape
    seed: int
    z_lo: np.ndarray  # (d,) lower lattice corner of the cached window
    occupancy: np.ndarray  # uint8, one entry per cached cell

    @property
    def mu(self) -> float:
        """Mean obstacle volume per cell, E xi = (1 - p) |W|."""
        return (1.0 - self.p) * self.shape.volume(self.dimension)

    @property
    def nu(self) -> float:
        return math.log(1.0 / self.p)

    def xi(self) -> np.ndarray:
        """xi_z = eps_z * |W| over the cached window."""
        return self.occupancy * self.shape.volume(self.dimension)

    def _threshold(self) -> np.uint64:
        # eps_z = 0 iff hash < p * 2^64, so P{eps_z = 0} = p to 2^-64.
        return _U64(min(int(self.p * 2.0**64), 2**64 - 1))

    def occupancy_for_axes(self, axes: list[np.ndarray]) -> np.ndarray:
        """Occupancy bits for an arbitrary lattice rectangle (pure in seed, z)."""
        bits = _cell_bits(self.seed, axes) >= self._threshold()
        return bits.astype(np.uint8)

    def epsilon_at(self, z) -> int:
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        idx = z - self.z_lo
        if np.all(idx >= 0) and np.all(idx < self.occupancy.shape):
            return int(self.occupancy[tuple(idx)])
        return int(self.occupancy_for_axes([np.asarray([c]) for c in z]).ravel()[0])

    def indicator_at(self, point, scaled: bool = False, tau: float | None = None) -> int:
        """1 iff the point lies inside some occupied cube z + W.

        With ``scaled=True`` the point is given in scaled coordinates and is
        mapped back through x -> x / tau before the membership test.
        """
        x = np.asarray(point, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"point must have {self.dimension} coordinates")
        if scaled:
            if tau is None:
                tau = tau_for(self.box_side, self.dimension)
            half = 0.5 * tau * self.box_side
            if np.any(np.abs(x) > half):
                raise ValueError("point outside the scaled box")
            x = x / tau
        elif np.any(np.abs(x) > 0.5 * self.box_side):
            raise ValueError("point outside the box")
        z = np.rint(x).astype(np.int64)
        if np.any(np.abs(x - z) > 0.5 * self.shape.side):
            return 0
        return self.epsilon_at(z)

    def indicator_on_axes(self, coords: list[np.ndarray], scaled: bool = False,
                          tau: float | None = None) -> np.ndarray:
        """Indicator sampled on a tensor-product point set, one array per axis.

        Exploits separability of the cube-membership test; the result is a
        uint8 array of shape ``(len(coords[0]), ..., len(coords[d-1]))``.
        """
        if scaled:
            if tau is None:
                tau = tau_for(self.box_side, self.dimension)
            coords = [np.asarray(c, dtype=float) / tau for c in coords]
        zs, inws = [], []
        for c in coords:
            z = np.rint(c).astype(np.int64)
            zs.append(z)
            inws.append(np.abs(c - z) <= 0.5 * self.shape.side)
        occ = self.occupancy_for_axes(zs)
        d = len(coords)
        for j, m in enumerate(inws):
            shape = [1] * d
            shape[j] = m.size
            occ = occ * m.reshape(shape).astype(np.uint8)
        return occ

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "stokeslab-skeleton/1",
            "d": self.dimension,
            "t": self.box_side,
            "p": self.p,
            "w": self.shape.side,
            "seed": self.seed,
            "z_lo": self.z_lo.tolist(),
            "cells": list(self.occupancy.shape),
            "occupancy_rle": _rle_encode(self.occupancy.ravel()),
        }
        return json.dumps(doc)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "SkeletonField":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SkeletonFormatError(f"not valid JSON: {exc}") from exc
        try:
            if doc["format"] != "stokeslab-skeleton/1":
                raise SkeletonFormatError(f"unknown format tag {doc.get('format')!r}")
            cells = tuple(doc["cells"])
            bits = _rle_decode(doc["occupancy_rle"], int(np.prod(cells)))
            field = cls(
                dimension=int(doc["d"]),
                box_side=float(doc["t"]),
                p=float(doc["p"]),
                shape=ObstacleShape(float(doc["w"])),
                seed=int(doc["seed"]),
                z_lo=np.asarray(doc["z_lo"], dtype=np.int64),
                occupancy=bits.reshape(cells),
            )
        except SkeletonFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SkeletonFormatError(f"malformed skeleton descriptor: {exc}") from exc
        return field

    @classmethod
    def load(cls, path) -> "SkeletonField":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _rle_encode(bits: np.ndarray) -> list[int]:
    """Run lengths of alternating values, first run counting zeros."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size == 0:
        return []
    edges = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate([[0], edges, [bits.size]])
    runs = np.diff(bounds).tolist()
    if bits[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def _rle_decode(runs: list[int], total: int) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise SkeletonFormatError("negative run length")
    if sum(runs) != total:
        raise SkeletonFormatError(f"run lengths sum to {sum(runs)}, expected {total}")
    out = np.zeros(total, dtype=np.uint8)
    pos, val = 0, 0
    for r in runs:
        if val:
            out[pos:pos + r] = 1
        pos += r
        val ^= 1
    return out


def _window_bounds(t: float) -> tuple[int, int]:
    """Lattice range [lo, hi] of cells z + (-1/2, 1/2]^d meeting (-t/2, t/2)."""
    half = 0.5 * (t + 1.0)
    lo = int(math.floor(-half)) + 1
    hi = int(math.ceil(half)) - 1
    return lo, hi


def generate_skeleton(d: int, t: float, p: float, shape: ObstacleShape,
                      seed: int) -> SkeletonField:
    """Draw the i.i.d. occupancy field for every cell intersecting the box.

    P{eps_z = 0} = p and xi_z = eps_z * |W|; requires 0 < p < 1 (the p = 1
    degenerate law has mu = 0 and is rejected) and t >= 4 so the box holds at
    least one full cell per axis.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension {d} not supported (use 2 or 3)")
    if not 0.0 < p < 1.0:
        raise ValueError(f"occupancy probability p must lie in (0, 1), got {p}")
    if t < 4:
        raise ValueError(f"box side t must be >= 4, got {t}")
    shape.volume(d)  # validates side in (0, 1)
    lo, hi = _window_bounds(t)
    axes = [np.arange(lo, hi + 1, dtype=np.int64) for _ in range(d)]
    field = SkeletonField(
        dimension=d,
        box_side=float(t),
        p=float(p),
        shape=shape,
        seed=int(seed),
        z_lo=np.full(d, lo, dtype=np.int64),
        occupancy=np.empty(0, dtype=np.uint8),
    )
    field.occupancy = field.occupancy_for_axes(axes)
    return field


def low_occupancy_blocks(sk: SkeletonField, H1: float, tau: float,
                         mu: float | None = None) -> set[tuple]:
    """Blocks of T^d cells whose solid-volume fraction is at most mu / 2.

    ``H1 = tau * T`` with T an odd natural; blocks are C_z^1 = H1 (z + Q) in
    scaled coordinates and, since W lies strictly inside its cell, the solid
    volume in a block is exactly |W| times its occupied-cell count.  Blocks
    are classified over the full lattice (cells beyond the cached window are
    re-derived from the seed), and the result restricts to blocks meeting the
    box.
    """
    T = int(round(H1 / tau))
    if T < 1 or T % 2 == 0 or abs(H1 - T * tau) > 1e-9 * tau:
        raise ValueError(f"H1 = {H1} is not an odd multiple of tau = {tau}")
    if mu is None:
        mu = sk.mu
    d = sk.dimension
    t = sk.box_side
    # C_z^1 intersects the box iff |z_j| < (t / T + 1) / 2.
    zmax = int(math.ceil(0.5 * (t / T + 1.0))) - 1
    nblk = 2 * zmax + 1
    half = (T - 1) // 2
    axes = [np.arange(-zmax * T - half, zmax * T + half + 1, dtype=np.int64)
            for _ in range(d)]
    occ = sk.occupancy_for_axes(axes).astype(np.int64)
    counts = occ.reshape(*[s for _ in range(d) for s in (nblk, T)]).sum(
        axis=tuple(2 * j + 1 for j in range(d)))
    frac = counts * sk.shape.volume(d) / float(T**d)
    hits = np.argwhere(frac <= 0.5 * mu)
    return {tuple(int(h) - zmax for h in row) for row in hits}
