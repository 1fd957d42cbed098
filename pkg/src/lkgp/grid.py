"""Partially observed product-grid datasets.

A grid is the Cartesian product of ``p`` spatial points and ``q`` temporal
(or task) points. Cell ``(j, k)`` has linear index ``j * q + k``, so the
temporal index runs fastest. This matches the block layout of
``K_SS ⊗ K_TT`` and is used by every other module.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DuplicateObservation, EmptyMask, IndexOutOfGrid, ParseError, ShapeMismatch


@dataclass(frozen=True)
class ObservationMask:
    """Sorted linear indices of the observed cells of a ``p x q`` grid."""

    p: int
    q: int
    observed: np.ndarray = field(repr=False)

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.int64).ravel()
        if self.p < 1 or self.q < 1:
            raise ShapeMismatch(f"grid dimensions must be positive, got p={self.p}, q={self.q}")
        if obs.size == 0:
            raise EmptyMask("mask has no observed cells")
        if obs.size > 1 and np.any(np.diff(obs) <= 0):
            if np.any(np.diff(np.sort(obs)) == 0):
                raise DuplicateObservation("observed indices contain duplicates")
            raise ValueError("observed indices must be strictly increasing")
        if obs[0] < 0 or obs[-1] >= self.p * self.q:
            raise IndexOutOfGrid(f"observed index outside [0, {self.p * self.q})")
        obs.setflags(write=False)
        object.__setattr__(self, "observed", obs)

    @classmethod
    def full(cls, p, q):
        return cls(p, q, np.arange(p * q))

    @property
    def pq(self):
        return self.p * self.q

    @property
    def count(self):
        return int(self.observed.size)

    @property
    def missing_ratio(self):
        return 1.0 - self.count / self.pq

    @cached_property
    def rows(self):
        """Spatial index of each observed cell."""
        return self.observed // self.q

    @cached_property
    def cols(self):
        """Temporal index of each observed cell."""
        return self.observed % self.q

    def missing(self):
        keep = np.ones(self.pq, dtype=bool)
        keep[self.observed] = False
        return np.flatnonzero(keep)

    def as_bool(self):
        """Boolean ``(p, q)`` array, True where observed."""
        out = np.zeros(self.pq, dtype=bool)
        out[self.observed] = True
        return out.reshape(self.p, self.q)

    def to_json(self):
        return json.dumps({"p": self.p, "q": self.q, "observed": self.observed.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        return cls(int(d["p"]), int(d["q"]), np.asarray(d["observed"], dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, ObservationMask):
            return NotImplemented
        return self.p == other.p and self.q == other.q and np.array_equal(self.observed, other.observed)

    def __hash__(self):
        return hash((self.p, self.q, self.observed.tobytes()))


@dataclass(frozen=True)
class PartialGrid:
    """Inputs ``S`` (p x d_s), ``T`` (q x d_t), observation mask and outputs.

    ``y[i]`` is the output at grid cell ``mask.observed[i]``.
    """

    s_points: np.ndarray
    t_points: np.ndarray
    mask: ObservationMask
    y: np.ndarray

    def __post_init__(self):
        s = _as_2d(self.s_points, "s_points")
        t = _as_2d(self.t_points, "t_points")
        y = np.asarray(self.y, dtype=float).ravel()
        if s.shape[0] != self.mask.p or t.shape[0] != self.mask.q:
            raise ShapeMismatch(
                f"inputs give a {s.shape[0]}x{t.shape[0]} grid, mask is {self.mask.p}x{self.mask.q}"
            )
        if y.size != self.mask.count:
            raise ShapeMismatch(f"y has {y.size} entries, mask observes {self.mask.count}")
        for a in (s, t, y):
            a.setflags(write=False)
        object.__setattr__(self, "s_points", s)
        object.__setattr__(self, "t_points", t)
        object.__setattr__(self, "y", y)

    @property
    def p(self):
        return self.mask.p

    @property
    def q(self):
        return self.mask.q

    @property
    def n(self):
        return self.mask.count

    def cells(self, indices=None):
        """``(j, k)`` pairs for the given linear indices (default: observed)."""
        idx = self.mask.observed if indices is None else np.asarray(indices)
        return np.stack([idx // self.q, idx % self.q], axis=1)

    def with_y(self, y):
        return PartialGrid(self.s_points, self.t_points, self.mask, y)

    def subset(self, observed):
        """Restrict to a subset of the currently observed linear indices."""
        observed = np.asarray(observed, dtype=np.int64)
        pos = np.searchsorted(self.mask.observed, observed)
        if np.any(pos >= self.n) or np.any(self.mask.observed[np.minimum(pos, self.n - 1)] != observed):
            raise IndexOutOfGrid("subset contains cells that are not observed")
        return PartialGrid(self.s_points, self.t_points, ObservationMask(self.p, self.q, observed), self.y[pos])


def _as_2d(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def build_partial_grid(s_points, t_points, observed_cells, y_values):
    """Assemble a :class:`PartialGrid` from ``(j, k)`` cells in any order.

    Cells are sorted into linear-index order and ``y_values`` is permuted to
    match.
    """
    s = _as_2d(s_points, "s_points")
    t = _as_2d(t_points, "t_points")
    p, q = s.shape[0], t.shape[0]
    cells = np.asarray(observed_cells, dtype=np.int64).reshape(-1, 2)
    y = np.asarray(y_values, dtype=float).ravel()
    if y.size != cells.shape[0]:
        raise ShapeMismatch(f"{cells.shape[0]} cells but {y.size} outputs")
    j, k = cells[:, 0], cells[:, 1]
    bad = (j < 0) | (j >= p) | (k < 0) | (k >= q)
    if np.any(bad):
        raise IndexOutOfGrid(f"cell {tuple(cells[np.argmax(bad)])} outside {p}x{q} grid")
    lin = j * q + k
    order = np.argsort(lin, kind="stable")
    lin = lin[order]
    if np.any(np.diff(lin) == 0):
        dup = lin[np.flatnonzero(np.diff(lin) == 0)[0]]
        raise DuplicateObservation(f"cell ({dup // q}, {dup % q}) observed more than once")
    return PartialGrid(s, t, ObservationMask(p, q, lin), y[order])


@dataclass(frozen=True)
class Uniform:
    """Remove ``round(ratio * p * q)`` cells uniformly at random."""

    ratio: float


@dataclass(frozen=True)
class Truncation:
    """Keep a prefix of every row; ``fully_observed_fraction`` of rows complete.

    Mimics learning curves stopped early: partial rows stop after a uniformly
    drawn number of steps in ``[1, q - 1]``.
    """

    fully_observed_fraction: float


def generate_mask(p, q, pattern, seed=None):
    rng = np.random.default_rng(seed)
    pq = p * q
    if isinstance(pattern, Uniform):
        if not 0.0 <= pattern.ratio < 1.0:
            if pattern.ratio == 1.0:
                raise EmptyMask("missing ratio 1 leaves no observations")
            raise ValueError(f"ratio must lie in [0, 1), got {pattern.ratio}")
        n_missing = int(round(pattern.ratio * pq))
        if n_missing >= pq:
            raise EmptyMask(f"ratio {pattern.ratio} removes every cell of a {p}x{q} grid")
        missing = rng.choice(pq, size=n_missing, replace=False)
        keep = np.ones(pq, dtype=bool)
        keep[missing] = False
        return ObservationMask(p, q, np.flatnonzero(keep))
    if isinstance(pattern, Truncation):
        frac = pattern.fully_observed_fraction
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"fully_observed_fraction must lie in [0, 1], got {frac}")
        n_full = int(round(frac * p))
        full_rows = np.zeros(p, dtype=bool)
        full_rows[rng.choice(p, size=n_full, replace=False)] = True
        lengths = np.full(p, q, dtype=np.int64)
        if q > 1:
            lengths[~full_rows] = rng.integers(1, q, size=int((~full_rows).sum()))
        obs = np.concatenate([j * q + np.arange(m) for j, m in enumerate(lengths)])
        return ObservationMask(p, q, obs)
    raise TypeError(f"unknown mask pattern {pattern!r}")


@dataclass(frozen=True)
class Standardization:
    mean: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.scale

    def invert(self, y_std):
        return np.asarray(y_std, dtype=float) * self.scale + self.mean

    def invert_variance(self, var_std):
        return np.asarray(var_std, dtype=float) * self.scale**2

    @classmethod
    def identity(cls):
        return cls(0.0, 1.0)


def standardize(y, min_scale=1e-12):
    """Shift to zero mean and unit (population) standard deviation."""
    y = np.asarray(y, dtype=float)
    mean = float(np.mean(y))
    scale = max(float(np.std(y)), min_scale)
    st = Standardization(mean, scale)
    return st.apply(y), st


@dataclass(frozen=True)
class CsvSchema:
    spatial: tuple
    temporal: tuple
    output: str = "y"

    @classmethod
    def from_header(cls, header):
        spatial = tuple(h for h in header if h.startswith("s:"))
        temporal = tuple(h for h in header if h.startswith("t:"))
        if not spatial or not temporal:
            raise ParseError("header needs at least one 's:<name>' and one 't:<name>' column", row=1)
        return cls(spatial, temporal, "y")


def load_csv(path, schema: CsvSchema | None = None) -> PartialGrid:
    """Read one observed cell per line into a :class:`PartialGrid`.

    Distinct spatial feature tuples become ``S`` and distinct temporal tuples
    become ``T``, both in order of first appearance. Tuples are identified by
    exact equality of their float64 byte representation.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        schema = schema or CsvSchema.from_header(header)
        try:
            s_cols = [header.index(c) for c in schema.spatial]
            t_cols = [header.index(c) for c in schema.temporal]
            y_col = header.index(schema.output)
        except ValueError as exc:
            raise ParseError(f"missing column: {exc}", row=1) from None

        s_index, t_index = {}, {}
        s_rows, t_rows, cells, ys = [], [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            try:
                s = np.array([float(row[c]) for c in s_cols])
                t = np.array([float(row[c]) for c in t_cols])
                yv = float(row[y_col])
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), row=rowno) from None
            j = s_index.setdefault(s.tobytes(), len(s_index))
            if j == len(s_rows):
                s_rows.append(s)
            k = t_index.setdefault(t.tobytes(), len(t_index))
            if k == len(t_rows):
                t_rows.append(t)
            cells.append((j, k))
            ys.append(yv)
    if not cells:
        raise EmptyMask(f"{path} contains no observations")
    try:
        return build_partial_grid(np.array(s_rows), np.array(t_rows), cells, ys)
    except DuplicateObservation as exc:
        raise DuplicateObservation(f"{path}: {exc}") from None


def save_csv(path, grid: PartialGrid, s_names: Sequence[str] | None = None, t_names: Sequence[str] | None = None):
    """Write ``grid`` in the format read by :func:`load_csv`."""
    s_names = s_names or [f"s{i}" for i in range(grid.s_points.shape[1])]
    t_names = t_names or [f"t{i}" for i in range(grid.t_points.shape[1])]
    cells = grid.cells()
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"s:{n}" for n in s_names] + [f"t:{n}" for n in t_names] + ["y"])
        for (j, k), yv in zip(cells, grid.y):
            w.writerow([repr(float(v)) for v in grid.s_points[j]] + [repr(float(v)) for v in grid.t_points[k]] + [repr(float(yv))])
