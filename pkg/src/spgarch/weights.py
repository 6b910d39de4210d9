"""Sparse spatial weight matrices.

A :class:`WeightMatrix` is an immutable, non-negative ``n x n`` matrix with a
zero diagonal. It is stored as canonical CSR (sorted column indices, no
duplicates) so the kernels can walk rows directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from spgarch._io import atomic_write_text
from spgarch.errors import DegenerateDistance, ParseError

__all__ = [
    "SiteSet",
    "WeightMatrix",
    "rook_grid",
    "inverse_distance",
    "delaunay_contiguity",
    "orient",
    "row_standardize",
    "matrix_inf_norm",
    "read_weights",
    "write_weights",
]

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SiteSet:
    """Site coordinates, one row per site (shape ``(n, q)``)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValueError("coords must be a non-empty (n, q) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def q(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def grid(cls, d: int) -> "SiteSet":
        """Lattice ``{1..d}^2`` in row-major order; columns are (x, y)."""
        rows, cols = np.divmod(np.arange(d * d), d)
        return cls(np.column_stack([cols + 1, rows + 1]).astype(np.float64))


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Immutable sparse weight matrix.

    Build through :meth:`from_triplets` or the constructors in this module;
    direct construction from a CSR matrix skips canonicalisation.
    """

    csr: sp.csr_matrix
    row_standardized: bool = False
    ordering: tuple[int, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_triplets(cls, n, rows, cols, weights, row_standardized=False, ordering=None):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == weights.shape):
            raise ValueError("rows, cols and weights must have equal length")
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        if rows.size:
            if rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n:
                raise ValueError("index out of range")
            if np.any(rows == cols):
                raise ValueError("diagonal entries are not allowed")
            if np.any(~np.isfinite(weights)) or np.any(weights < 0):
                raise ValueError("weights must be finite and non-negative")
            keys = rows * n + cols
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (row, col) entries")
        m = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
        m.sort_indices()
        return cls._wrap(m, row_standardized, ordering)

    @classmethod
    def _wrap(cls, m, row_standardized=False, ordering=None):
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sort_indices()
        m.indptr = m.indptr.astype(np.int64)
        m.indices = m.indices.astype(np.int64)
        for a in (m.data, m.indices, m.indptr):
            a.setflags(write=False)
        w = cls(m, bool(row_standardized), None if ordering is None else tuple(ordering))
        if w.row_standardized:
            sums = w.row_sums()
            nonempty = np.diff(m.indptr) > 0
            if np.any(np.abs(sums[nonempty] - 1.0) > _ROW_SUM_TOL):
                raise ValueError("row_standardized flag set but rows do not sum to 1")
        return w

    @classmethod
    def zeros(cls, n: int) -> "WeightMatrix":
        return cls.from_triplets(n, [], [], [])

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def data(self) -> np.ndarray:
        return self.csr.data

    def triplets(self):
        """Entries as ``(rows, cols, weights)`` arrays in row-major order."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).ravel()

    @property
    def isolated(self) -> tuple[int, ...]:
        """Sites whose row has no neighbours."""
        if "isolated" not in self._cache:
            self._cache["isolated"] = tuple(int(i) for i in np.flatnonzero(np.diff(self.indptr) == 0))
        return self._cache["isolated"]

    @property
    def is_strictly_lower(self) -> bool:
        if "lower" not in self._cache:
            rows, cols, _ = self.triplets()
            self._cache["lower"] = bool(np.all(cols < rows))
        return self._cache["lower"]

    def is_symmetric(self, tol: float = 0.0) -> bool:
        d = abs(self.csr - self.csr.T)
        return d.nnz == 0 or float(d.max()) <= tol

    def __matmul__(self, x):
        return self.csr @ x

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __eq__(self, other):
        if not isinstance(other, WeightMatrix):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __hash__(self):
        return hash((self.n, self.nnz, self.data.tobytes()))


def rook_grid(d: int, oriented: bool = False) -> WeightMatrix:
    """Row-standardised rook contiguity on a ``d x d`` lattice.

    Sites are numbered row-major. With ``oriented=True`` only neighbours that
    precede a site (left and above) are kept before standardising, which
    makes the matrix strictly lower triangular.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    idx = np.arange(d * d).reshape(d, d)
    pairs = [
        (idx[:, 1:].ravel(), idx[:, :-1].ravel()),  # left neighbour
        (idx[1:, :].ravel(), idx[:-1, :].ravel()),  # upper neighbour
    ]
    if not oriented:
        pairs += [(c, r) for r, c in pairs]
    rows = np.concatenate([p[0] for p in pairs])
    cols = np.concatenate([p[1] for p in pairs])
    w = WeightMatrix.from_triplets(d * d, rows, cols, np.ones(rows.size),
                                   ordering=tuple(range(d * d)))
    return row_standardize(w)


def inverse_distance(sites: SiteSet, k: float = 1.0, cutoff: float | None = None) -> WeightMatrix:
    """Dense inverse-distance weights ``||s_i - s_j||^-k`` (not standardised)."""
    if not k > 0:
        raise ValueError("k must be positive")
    if cutoff is not None and not cutoff > 0:
        raise ValueError("cutoff must be positive")
    x = sites.coords
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    n = sites.n
    off = ~np.eye(n, dtype=bool)
    zero = off & (dist == 0.0)
    if np.any(zero):
        i, j = np.argwhere(zero)[0]
        raise DegenerateDistance(int(i), int(j))
    keep = off if cutoff is None else off & (dist <= cutoff)
    rows, cols = np.nonzero(keep)
    return WeightMatrix.from_triplets(n, rows, cols, dist[rows, cols] ** (-float(k)))


def delaunay_contiguity(sites: SiteSet) -> WeightMatrix:
    """Binary symmetric adjacency from the Delaunay triangulation of 2-D sites.

    Gives a random planar contiguity graph for synthetic polygon-like maps.
    """
    if sites.q != 2 or sites.n < 3:
        raise ValueError("need at least three 2-D sites")
    tri = Delaunay(sites.coords)
    s = tri.simplices
    edges = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return WeightMatrix.from_triplets(sites.n, rows, cols, np.ones(rows.size))


def orient(w: WeightMatrix, standardize: bool = True) -> WeightMatrix:
    """Drop every entry on or above the diagonal (``col >= row``)."""
    rows, cols, vals = w.triplets()
    keep = cols < rows
    out = WeightMatrix.from_triplets(w.n, rows[keep], cols[keep], vals[keep],
                                     ordering=tuple(range(w.n)))
    return row_standardize(out) if standardize else out


def row_standardize(w: WeightMatrix) -> WeightMatrix:
    """Divide each non-empty row by its sum; empty rows stay zero.

    Empty rows are reported through :attr:`WeightMatrix.isolated`.
    """
    if w.row_standardized:
        return w
    sums = w.row_sums()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    m = sp.diags(scale) @ w.csr
    out = WeightMatrix._wrap(m, row_standardized=False, ordering=w.ordering)
    # rows of one entry become exactly 1; others are within a few ulps
    return WeightMatrix(out.csr, True, w.ordering)


def matrix_inf_norm(w) -> float:
    """Maximum absolute row sum; accepts a WeightMatrix or any scipy sparse matrix."""
    m = w.csr if isinstance(w, WeightMatrix) else sp.csr_matrix(w)
    if m.nnz == 0:
        return 0.0
    return float(np.asarray(abs(m).sum(axis=1)).max())


def read_weights(path) -> WeightMatrix:
    """Parse the triplet text format (``n`` then ``row col weight`` lines)."""
    text = Path(path).read_text(encoding="utf-8")
    n = None
    rows, cols, vals = [], [], []
    seen = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 1:
                raise ParseError("expected the site count", lineno)
            try:
                n = int(parts[0])
            except ValueError:
                raise ParseError(f"bad site count {parts[0]!r}", lineno) from None
            if n < 1:
                raise ParseError("site count must be >= 1", lineno)
            continue
        if len(parts) != 3:
            raise ParseError(f"expected 'row col weight', got {line!r}", lineno)
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"malformed entry {line!r}", lineno) from None
        if not (0 <= r < n and 0 <= c < n):
            raise ParseError(f"index out of range for n={n}", lineno)
        if r == c:
            raise ParseError("diagonal entry", lineno)
        if not math.isfinite(v) or v < 0:
            raise ParseError(f"negative or non-finite weight {parts[2]}", lineno)
        if (r, c) in seen:
            raise ParseError(f"duplicate entry ({r}, {c})", lineno)
        seen.add((r, c))
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if n is None:
        raise ParseError("empty weight file")
    w = WeightMatrix.from_triplets(n, rows, cols, vals)
    sums = w.row_sums()
    nonempty = np.diff(w.indptr) > 0
    if w.nnz and np.all(np.abs(sums[nonempty] - 1.0) <= _ROW_SUM_TOL):
        w = WeightMatrix(w.csr, True, None)
    return w


def format_weights(w: WeightMatrix) -> str:
    rows, cols, vals = w.triplets()
    lines = [str(w.n)]
    lines += [f"{r} {c} {float(v)!r}" for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist())]
    return "\n".join(lines) + "\n"


def write_weights(w: WeightMatrix, path) -> None:
    atomic_write_text(path, format_weights(w))
