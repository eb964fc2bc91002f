"""Local interpolation weights and reusable grid-to-grid transfer plans.

A transfer plan precomputes, for every target point, the containing source
cell, the 2^d stencil of cell-corner nodes, the interpolation weights, and a
validity flag (targets outside the source hull are kept but flagged).  Plans
are built once and applied to any number of fields on the source grid, which
is what makes the multi-pass boosted interpolations cheap.

Two weight rules are provided:

* ``multilinear`` - tensor-product linear weights of the local cell
  coordinates (bilinear in 2D, trilinear in 3D).  On perturbed cells the
  local coordinates are the Newton-recovered axis parameters, i.e. the
  standard isoparametric interpretation.
* ``lls`` - the value at the target of the affine function that best fits
  the 2^d cell-corner values in the least-squares sense, computed from the
  normal equations of a (d+1)-parameter fit.  At the centroid of a
  rectangular cell this reduces to the plain average of the corner values.

Both rules reproduce affine functions exactly and their weights sum to 1.

Corner ordering convention: corner ``c`` of a cell has per-axis offset
``(c >> a) & 1``, i.e. lexicographic with the lowest axis varying fastest.
Flat node indices are C-order (last axis fastest), as used by numpy.

Internally a plan is stored either per-axis ("product" layout, when both
grids are unrotated and the rule is multilinear - the target lattice then
factorizes axis by axis, which keeps even 3D plans with tens of millions of
targets small) or per-point ("point" layout, the general case).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid

__all__ = [
    "TransferPlan",
    "GridMismatchError",
    "DimMismatchError",
    "RankDeficientError",
    "multilinear_weights",
    "lls_weights",
    "build_transfer_plan",
    "apply_plan",
]

_CHUNK = 1 << 20
_LLS_DET_TOL = 1e-12


class GridMismatchError(ValueError):
    """Field grid does not match the plan's source grid."""


class DimMismatchError(ValueError):
    """Grids of different dimension were combined."""


class RankDeficientError(ValueError):
    """Degenerate cell-vertex configuration in a least-squares fit."""


def _corner_bits(dim: int) -> np.ndarray:
    """(2^d, d) array of corner offsets, lowest axis fastest."""
    corners = np.arange(1 << dim)
    return (corners[:, None] >> np.arange(dim)[None, :]) & 1


def multilinear_weights(local) -> np.ndarray:
    """Tensor-product weights for local coordinates in [0, 1]^d.

    ``local`` has shape (..., d); the result has shape (..., 2^d) in the
    corner ordering documented in the module docstring.
    """
    t = np.asarray(local, dtype=float)
    if t.ndim == 0:
        t = t[None]
    dim = t.shape[-1]
    if np.any((t < -1e-12) | (t > 1.0 + 1e-12)):
        raise ValueError("local coordinates must lie in [0, 1]")
    t = np.clip(t, 0.0, 1.0)
    bits = _corner_bits(dim)  # (2^d, d)
    w = np.ones(t.shape[:-1] + (1 << dim,), dtype=float)
    for a in range(dim):
        ta = t[..., a, None]
        w = w * np.where(bits[:, a] == 1, ta, 1.0 - ta)
    return w


def _lls_weights_batch(verts: np.ndarray, pts: np.ndarray):
    """Least-squares affine evaluation weights, batched.

    verts: (N, 2^d, d) cell-corner positions; pts: (N, d) evaluation points.
    Returns (weights (N, 2^d), ok (N,)); entries with an affinely degenerate
    corner set get ok=False.  Coordinates are centered and scaled per cell
    before forming the normal equations, so conditioning is size-independent.
    """
    verts = np.asarray(verts, dtype=float)
    pts = np.asarray(pts, dtype=float)
    n, m, dim = verts.shape
    ctr = verts.mean(axis=1, keepdims=True)
    scale = verts.max(axis=1, keepdims=True) - verts.min(axis=1, keepdims=True)
    scale = np.where(scale > 0.0, scale, 1.0)
    v = (verts - ctr) / scale
    q = (pts - ctr[:, 0, :]) / scale[:, 0, :]
    x = np.concatenate([np.ones((n, m, 1)), v], axis=2)  # (N, 2^d, d+1)
    a = np.einsum("nmi,nmj->nij", x, x)
    ok = np.abs(np.linalg.det(a)) > _LLS_DET_TOL
    if not ok.all():
        a = a.copy()
        a[~ok] = np.eye(dim + 1)
    e = np.concatenate([np.ones((n, 1)), q], axis=1)  # (N, d+1)
    y = np.linalg.solve(a, e[..., None])[..., 0]
    w = np.einsum("nmi,ni->nm", x, y)
    return w, ok


def lls_weights(cell_vertices, p) -> np.ndarray:
    """Affine least-squares weights for one cell; raises if degenerate."""
    verts = np.asarray(cell_vertices, dtype=float)[None]
    pts = np.asarray(p, dtype=float)[None]
    w, ok = _lls_weights_batch(verts, pts)
    if not ok[0]:
        raise RankDeficientError("cell vertices are affinely degenerate")
    return w[0]


def _strides(counts) -> np.ndarray:
    """Element strides of a C-order array with the given shape."""
    s = np.ones(len(counts), dtype=np.int64)
    for a in range(len(counts) - 2, -1, -1):
        s[a] = s[a + 1] * counts[a + 1]
    return s


class TransferPlan:
    """Precomputed stencil mapping a source grid's nodes to target points.

    Concrete layouts implement ``apply``/``stencil_all``/``gather_base`` and
    the materializing accessors ``corner_indices``/``corner_weights`` (the
    latter two build (n_targets, 2^d) arrays - fine for inspection and tests,
    deliberately avoided in the hot paths).
    """

    source: Grid
    method: str
    n_targets: int
    target_shape: tuple[int, ...] | None

    @property
    def valid(self) -> np.ndarray:
        raise NotImplementedError

    def apply(self, f: Field):
        """Interpolate ``f`` to the plan's targets.

        Returns ``(values, mask)``; invalid targets hold NaN and mask False.
        """
        raise NotImplementedError

    def stencil_all(self, flags: np.ndarray) -> np.ndarray:
        """Per target: do all 2^d stencil nodes have ``flags`` True?"""
        raise NotImplementedError

    def gather_base(self, values: np.ndarray) -> np.ndarray:
        """Per target: the value at the base (lowest) corner of its cell."""
        raise NotImplementedError

    def corner_indices(self) -> np.ndarray:
        raise NotImplementedError

    def corner_weights(self) -> np.ndarray:
        raise NotImplementedError

    def _check_field(self, f: Field):
        if f.grid != self.source:
            raise GridMismatchError("field grid does not match plan source grid")


@dataclass(eq=False)
class _PointPlan(TransferPlan):
    """General layout: explicit cell/weights per target point."""

    source: Grid
    method: str
    cell: np.ndarray  # (N, d)
    weights: np.ndarray  # (N, 2^d)
    _valid: np.ndarray  # (N,)
    target_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        self.n_targets = self.cell.shape[0]
        strides = _strides(self.source.counts)
        self._base = self.cell @ strides
        self._offsets = _corner_bits(self.source.dim) @ strides  # (2^d,)

    @property
    def valid(self) -> np.ndarray:
        return self._valid

    def apply(self, f: Field):
        self._check_field(f)
        src = f.values.reshape(-1)
        out = np.empty(self.n_targets, dtype=float)
        for start in range(0, self.n_targets, _CHUNK):
            sl = slice(start, min(start + _CHUNK, self.n_targets))
            base = self._base[sl]
            acc = np.zeros(base.shape[0], dtype=float)
            for c, off in enumerate(self._offsets):
                acc += self.weights[sl, c] * src[base + off]
            out[sl] = acc
        out[~self._valid] = np.nan
        return out, self._valid.copy()

    def stencil_all(self, flags: np.ndarray) -> np.ndarray:
        flat = flags.reshape(-1)
        ok = np.ones(self.n_targets, dtype=bool)
        for off in self._offsets:
            ok &= flat[self._base + off]
        return ok

    def gather_base(self, values: np.ndarray) -> np.ndarray:
        return values.reshape(-1)[self._base]

    def corner_indices(self) -> np.ndarray:
        return self._base[:, None] + self._offsets[None, :]

    def corner_weights(self) -> np.ndarray:
        return self.weights.copy()


@dataclass(eq=False)
class _ProductPlan(TransferPlan):
    """Axis-factorized layout for unrotated-grid multilinear transfers."""

    source: Grid
    method: str
    axis_cell: tuple[np.ndarray, ...]  # per axis (m_a,)
    axis_local: tuple[np.ndarray, ...]
    axis_inside: tuple[np.ndarray, ...]
    target_shape: tuple[int, ...]

    def __post_init__(self):
        self.n_targets = int(np.prod(self.target_shape))

    @property
    def valid(self) -> np.ndarray:
        ok = np.ones(self.target_shape, dtype=bool)
        for a, ins in enumerate(self.axis_inside):
            shape = [1] * len(self.target_shape)
            shape[a] = ins.size
            ok = ok & ins.reshape(shape)
        return ok.reshape(-1)

    def _contract(self, values: np.ndarray, combine):
        out = values
        for a, (cell, loc) in enumerate(zip(self.axis_cell, self.axis_local)):
            lo = np.take(out, cell, axis=a)
            hi = np.take(out, cell + 1, axis=a)
            shape = [1] * out.ndim
            shape[a] = loc.size
            out = combine(lo, hi, loc.reshape(shape))
        return out

    def apply(self, f: Field):
        self._check_field(f)
        vals = self._contract(
            f.values, lambda lo, hi, t: lo * (1.0 - t) + hi * t
        ).reshape(-1)
        mask = self.valid
        vals[~mask] = np.nan
        return vals, mask

    def stencil_all(self, flags: np.ndarray) -> np.ndarray:
        return self._contract(flags, lambda lo, hi, t: lo & hi).reshape(-1)

    def gather_base(self, values: np.ndarray) -> np.ndarray:
        return values[np.ix_(*self.axis_cell)].reshape(-1)

    def corner_indices(self) -> np.ndarray:
        cell = self._cell_matrix()
        strides = _strides(self.source.counts)
        base = cell @ strides
        return base[:, None] + (_corner_bits(self.source.dim) @ strides)[None, :]

    def corner_weights(self) -> np.ndarray:
        return multilinear_weights(self._local_matrix())

    def _cell_matrix(self) -> np.ndarray:
        grids = np.meshgrid(*self.axis_cell, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)

    def _local_matrix(self) -> np.ndarray:
        grids = np.meshgrid(*self.axis_local, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)


def _build_point_plan(
    source: Grid, points: np.ndarray, method: str, target_shape=None
) -> _PointPlan:
    loc = source.locate(points)
    cell, local, valid = loc.cell, loc.local, loc.inside
    if method == "multilinear":
        weights = multilinear_weights(local)
    elif method == "lls":
        bits = _corner_bits(source.dim)
        corner_idx = cell[:, None, :] + bits[None, :, :]  # (N, 2^d, d)
        chi = np.empty(corner_idx.shape, dtype=float)
        for a in range(source.dim):
            chi[..., a] = source.axis_coords(a)[corner_idx[..., a]]
        # Fit in the source's unrotated frame: the target coordinates get
        # unrotated the same way, and an affine fit is rotation-equivariant.
        pts_frame = source._unrotate(np.asarray(points, dtype=float))
        weights, ok = _lls_weights_batch(chi, pts_frame)
        valid = valid & ok
    else:
        raise ValueError(f"unknown method {method!r}")
    return _PointPlan(
        source=source,
        method=method,
        cell=cell,
        weights=weights,
        _valid=valid,
        target_shape=target_shape,
    )


def build_transfer_plan(source: Grid, targets, method: str = "multilinear"):
    """Build a transfer plan from ``source`` to ``targets``.

    ``targets`` is either an (N, d) array of physical points or a Grid whose
    nodes are the target points.  Targets outside the source hull (or with a
    degenerate least-squares cell) are flagged invalid rather than rejected.
    """
    if method not in ("multilinear", "lls"):
        raise ValueError(f"unknown method {method!r}")
    if isinstance(targets, Grid):
        target = targets
        if target.dim != source.dim:
            raise DimMismatchError(
                f"source is {source.dim}D but target is {target.dim}D"
            )
        separable = (
            method == "multilinear"
            and source.rotation is None
            and target.rotation is None
        )
        if separable:
            axis_cell, axis_local, axis_inside = [], [], []
            for a in range(source.dim):
                c, t, ins = source.locate_axis(a, target.axis_coords(a))
                axis_cell.append(c)
                axis_local.append(t)
                axis_inside.append(ins)
            return _ProductPlan(
                source=source,
                method=method,
                axis_cell=tuple(axis_cell),
                axis_local=tuple(axis_local),
                axis_inside=tuple(axis_inside),
                target_shape=target.counts,
            )
        return _build_point_plan(
            source, target.node_positions(), method, target_shape=target.counts
        )
    points = np.atleast_2d(np.asarray(targets, dtype=float))
    if points.shape[-1] != source.dim:
        raise DimMismatchError(f"target points must have {source.dim} components")
    return _build_point_plan(source, points, method)


def apply_plan(plan: TransferPlan, f: Field):
    """Apply ``plan`` to a field on its source grid.

    Returns ``(values, mask)`` over the plan's targets; invalid targets hold
    a quiet NaN and mask False.
    """
    return plan.apply(f)
