"""Structured grids (1D/2D/3D) with smooth coordinate maps and cell location.

A grid is an index lattice ``i = (i_1, ..., i_d)`` together with a coordinate
map built from three layers, applied in order:

1. axis map            u_a(i_a) = origin_a + i_a * spacing_a
2. axis perturbation   chi_a(u) = u + amplitude * spacing_a * sin(pi * (u - c_a))
3. rigid rotation      x = R (chi - center) + center

Layers 1-2 are separable per axis, which keeps the inverse map cheap: the
uniform/shifted case inverts in closed form, the perturbed case with a scalar
Newton iteration per axis, and rotation is undone by the transpose.  The
perturbation is a diffeomorphism as long as ``amplitude * pi < 1`` (the
derivative ``1 + amplitude*spacing*pi*cos(.)`` then stays positive for any
spacing below ``1/(amplitude*pi)``, and node ordering is strictly monotone).

Grids are immutable; every operation returns a new grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "Grid",
    "CellLocation",
    "Field",
    "GridError",
    "NewtonDivergenceError",
    "make_uniform_grid",
    "shift_grid",
    "rotate_grid",
    "perturb_grid",
    "split_fine_grid",
    "locate_cell",
]

#: Acceptance slack for points on the hull, in units of one cell.
_INDEX_TOL = 1e-9

_NEWTON_TOL = 1e-12
_NEWTON_MAX_ITER = 25


class GridError(ValueError):
    """Invalid grid construction or use."""


class NewtonDivergenceError(RuntimeError):
    """Newton inversion of a perturbed axis map failed to converge."""


def _as_tuple(value, dim: int, name: str) -> tuple[float, ...]:
    """Broadcast a scalar or length-d sequence to a d-tuple of floats."""
    if np.ndim(value) == 0:
        return (float(value),) * dim
    vals = tuple(float(v) for v in np.asarray(value).ravel())
    if len(vals) != dim:
        raise GridError(f"{name} must be a scalar or length-{dim}, got {value!r}")
    return vals


@dataclass(frozen=True)
class Rotation:
    """Rigid rotation ``x -> R (x - center) + center`` (row-major matrix)."""

    matrix: tuple[tuple[float, ...], ...]
    center: tuple[float, ...]

    @property
    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)


@dataclass(frozen=True)
class CellLocation:
    """Result of locating points in a grid.

    ``cell`` is the per-axis lower cell index and ``local`` the per-axis
    coordinate in [0, 1] of the point within that cell, measured in the
    grid's unperturbed axis parameter (isoparametric convention).  For a
    point exactly on a node the lower cell is preferred, so ``local == 1``
    occurs only on the upper hull face.  ``inside`` flags points within the
    lattice hull (with a relative slack of ~1e-9 cells); for outside points
    ``cell``/``local`` hold the clamped nearest location.
    """

    cell: np.ndarray  # (..., d) int
    local: np.ndarray  # (..., d) float
    inside: np.ndarray  # (...) bool


@dataclass(frozen=True)
class Grid:
    """Structured lattice with a smooth, invertible coordinate map."""

    counts: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    perturb_amplitude: float = 0.0
    perturb_center: tuple[float, ...] | None = None
    rotation: Rotation | None = None

    def __post_init__(self):
        dim = len(self.counts)
        if dim not in (1, 2, 3):
            raise GridError(f"dim must be 1, 2 or 3, got {dim}")
        if len(self.spacing) != dim or len(self.origin) != dim:
            raise GridError("counts, spacing and origin must have equal length")
        if any(n < 2 for n in self.counts):
            raise GridError(f"every axis needs >= 2 nodes, got counts={self.counts}")
        if any(not (h > 0.0) for h in self.spacing):
            raise GridError(f"every spacing must be > 0, got spacing={self.spacing}")
        if self.perturb_amplitude < 0.0:
            raise GridError("perturbation amplitude must be >= 0")
        if self.perturb_amplitude * math.pi >= 1.0:
            raise GridError(
                f"amplitude*pi must be < 1 for an invertible map, got "
                f"amplitude={self.perturb_amplitude}"
            )
        if self.perturb_amplitude > 0.0 and self.perturb_center is None:
            raise GridError("perturbed grid needs perturb_center")

    # -- basic queries ----------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.counts))

    @property
    def map_kind(self) -> str:
        if self.rotation is not None:
            return "rotated"
        if self.perturb_amplitude > 0.0:
            return "perturbed"
        return "uniform"

    # -- coordinate map ---------------------------------------------------

    def _perturb(self, a: int, u: np.ndarray) -> np.ndarray:
        """Apply the axis perturbation chi_a to unperturbed coordinates."""
        if self.perturb_amplitude == 0.0:
            return u
        amp = self.perturb_amplitude * self.spacing[a]
        return u + amp * np.sin(np.pi * (u - self.perturb_center[a]))

    def axis_coords(self, a: int) -> np.ndarray:
        """Pre-rotation node coordinates along axis ``a`` (strictly increasing)."""
        u = self.origin[a] + self.spacing[a] * np.arange(self.counts[a])
        return self._perturb(a, u)

    def axis_interval(self, a: int) -> tuple[float, float]:
        """Pre-rotation hull interval along axis ``a``."""
        lo = self._perturb(a, np.asarray(self.origin[a]))
        hi = self._perturb(
            a, np.asarray(self.origin[a] + self.spacing[a] * (self.counts[a] - 1))
        )
        return float(lo), float(hi)

    def _rotate(self, chi: np.ndarray) -> np.ndarray:
        if self.rotation is None:
            return chi
        rot = self.rotation.as_array
        ctr = np.asarray(self.rotation.center)
        return (chi - ctr) @ rot.T + ctr

    def _unrotate(self, x: np.ndarray) -> np.ndarray:
        if self.rotation is None:
            return x
        rot = self.rotation.as_array
        ctr = np.asarray(self.rotation.center)
        return (x - ctr) @ rot + ctr

    def coordinate_mesh(self) -> list[np.ndarray]:
        """Physical coordinates of all nodes, one array per axis.

        For unrotated grids the arrays are broadcastable 1D views (shape
        ``(n_a,)`` reshaped along axis ``a``); for rotated grids they are
        full ``counts``-shaped arrays.
        """
        axes = [self.axis_coords(a) for a in range(self.dim)]
        shaped = []
        for a, coords in enumerate(axes):
            shape = [1] * self.dim
            shape[a] = self.counts[a]
            shaped.append(coords.reshape(shape))
        if self.rotation is None:
            return shaped
        full = [np.broadcast_to(c, self.counts) for c in shaped]
        chi = np.stack([c.ravel() for c in full], axis=-1)
        x = self._rotate(chi)
        return [x[:, a].reshape(self.counts) for a in range(self.dim)]

    def node_positions(self) -> np.ndarray:
        """All node positions as an ``(node_count, dim)`` array (C order)."""
        mesh = self.coordinate_mesh()
        cols = [np.broadcast_to(m, self.counts).ravel() for m in mesh]
        return np.stack(cols, axis=-1)

    def node_position(self, index: Sequence[int]) -> np.ndarray:
        """Physical position of a single node index."""
        if len(index) != self.dim:
            raise GridError(f"index must have length {self.dim}")
        chi = np.array(
            [self.axis_coords(a)[index[a]] for a in range(self.dim)], dtype=float
        )
        return self._rotate(chi)

    def position_from(self, cell: np.ndarray, local: np.ndarray) -> np.ndarray:
        """Physical points for (cell, local) pairs; inverse of :meth:`locate`."""
        cell = np.asarray(cell)
        local = np.asarray(local, dtype=float)
        chi = np.empty(local.shape, dtype=float)
        for a in range(self.dim):
            u = self.origin[a] + self.spacing[a] * (cell[..., a] + local[..., a])
            chi[..., a] = self._perturb(a, u)
        return self._rotate(chi)

    # -- inverse map ------------------------------------------------------

    def _invert_axis(self, a: int, x: np.ndarray) -> np.ndarray:
        """Solve chi_a(u) = x for u (Newton when perturbed, identity otherwise)."""
        if self.perturb_amplitude == 0.0:
            return x
        amp = self.perturb_amplitude * self.spacing[a]
        ctr = self.perturb_center[a]
        u = np.asarray(x, dtype=float).copy()
        tol = _NEWTON_TOL * self.spacing[a]
        for _ in range(_NEWTON_MAX_ITER):
            res = u + amp * np.sin(np.pi * (u - ctr)) - x
            if np.all(np.abs(res) <= tol):
                return u
            u -= res / (1.0 + amp * np.pi * np.cos(np.pi * (u - ctr)))
        raise NewtonDivergenceError(
            f"axis-{a} inversion did not reach {tol:g} in {_NEWTON_MAX_ITER} iterations"
        )

    def locate_axis(self, a: int, coords: np.ndarray):
        """Locate pre-rotation axis coordinates along one axis.

        Returns ``(cell, local, inside)`` arrays; ``cell`` is clipped to
        ``[0, n_a - 2]`` so it is always a usable stencil base.
        """
        coords = np.asarray(coords, dtype=float)
        u = self._invert_axis(a, coords)
        t = (u - self.origin[a]) / self.spacing[a]
        n = self.counts[a]
        inside = (t >= -_INDEX_TOL) & (t <= n - 1 + _INDEX_TOL)
        cell = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
        local = np.clip(t - cell, 0.0, 1.0)
        return cell, local, inside

    def locate(self, points: np.ndarray) -> CellLocation:
        """Locate physical points; see :class:`CellLocation` for conventions."""
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[-1] != self.dim:
            raise GridError(f"points must have {self.dim} components")
        chi = self._unrotate(pts)
        cell = np.empty(pts.shape, dtype=np.int64)
        local = np.empty(pts.shape, dtype=float)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a in range(self.dim):
            c, t, ok = self.locate_axis(a, chi[..., a])
            cell[..., a] = c
            local[..., a] = t
            inside &= ok
        if squeeze:
            return CellLocation(cell[0], local[0], inside[0])
        return CellLocation(cell, local, inside)


@dataclass(frozen=True)
class Field:
    """Scalar values attached one-to-one to a grid's nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.counts:
            if vals.size != self.grid.node_count:
                raise GridError(
                    f"field shape {vals.shape} does not match grid {self.grid.counts}"
                )
            vals = vals.reshape(self.grid.counts)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


# -- constructors and transforms ------------------------------------------


def make_uniform_grid(counts, spacing, origin=0.0) -> Grid:
    """Uniform rectangular grid: node i at ``origin + i*spacing`` per axis."""
    if np.ndim(counts) == 0:
        counts = (int(counts),)
    counts = tuple(int(n) for n in counts)
    dim = len(counts)
    return Grid(
        counts=counts,
        spacing=_as_tuple(spacing, dim, "spacing"),
        origin=_as_tuple(origin, dim, "origin"),
    )


def shift_grid(g: Grid, w) -> Grid:
    """Translate every node of ``g`` by the physical vector ``w``."""
    w = np.asarray(_as_tuple(w, g.dim, "w") if np.ndim(w) == 0 else w, dtype=float)
    if w.shape != (g.dim,):
        raise GridError(f"w must have {g.dim} components")
    if not np.all(np.isfinite(w)):
        raise GridError("w must be finite")
    # A post-rotation translation by w equals a pre-rotation one by R^T w,
    # which folds into the axis origins (and the perturbation centers, so the
    # sine argument translates with the nodes and positions shift exactly).
    w_pre = g._unrotate(w + np.asarray(g.rotation.center)) - np.asarray(
        g.rotation.center
    ) if g.rotation is not None else w
    origin = tuple(o + dw for o, dw in zip(g.origin, w_pre))
    center = None
    if g.perturb_center is not None:
        center = tuple(c + dw for c, dw in zip(g.perturb_center, w_pre))
    return replace(g, origin=origin, perturb_center=center)


def _rotation_matrix(angle_deg: float, axis, dim: int) -> np.ndarray:
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    if dim == 2:
        return np.array([[c, -s], [s, c]])
    ax = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(ax)
    if abs(norm - 1.0) > 1e-12:
        raise GridError(f"rotation axis must be a unit vector, |axis|={norm:g}")
    ax = ax / norm
    x, y, z = ax
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rotate_grid(g: Grid, angle_deg: float, axis=None, center=None) -> Grid:
    """Rigidly rotate ``g`` about ``center`` (default: hull center).

    2D rotates in-plane; 3D needs a unit ``axis`` (normalized silently when
    within 1e-12 of unit length, rejected otherwise).  Rotations compose, so
    rotating back by the opposite angle restores the original positions.
    Perturbed grids are not rotatable.
    """
    if g.dim == 1:
        raise GridError("rotation is undefined in 1D")
    if g.perturb_amplitude > 0.0:
        raise GridError("cannot rotate a perturbed grid")
    if g.dim == 3 and axis is None:
        axis = (0.0, 0.0, 1.0)
    r2 = _rotation_matrix(angle_deg, axis, g.dim)
    if center is None:
        center = tuple(
            0.5 * (lo + hi) for lo, hi in (g.axis_interval(a) for a in range(g.dim))
        )
    c2 = np.asarray(_as_tuple(center, g.dim, "center"))
    if g.rotation is None:
        rot = Rotation(tuple(map(tuple, r2)), tuple(c2))
        return replace(g, rotation=rot)
    # Compose onto the existing rotation about c1, folding the residual
    # translation into the axis origins: delta = (R2 R1)^T (R2(c1-c2)+c2-c1).
    r1 = g.rotation.as_array
    c1 = np.asarray(g.rotation.center)
    r_new = r2 @ r1
    delta = r_new.T @ (r2 @ (c1 - c2) + c2 - c1)
    rot = Rotation(tuple(map(tuple, r_new)), tuple(c1))
    origin = tuple(o + d for o, d in zip(g.origin, delta))
    return replace(g, origin=origin, rotation=rot)


def perturb_grid(g: Grid, amplitude: float = 0.1, lengths=None) -> Grid:
    """Smoothly perturb an unrotated grid's nodes along each axis.

    Node coordinates become ``u + amplitude*spacing*sin(pi*(u - c))`` with
    ``c = origin + lengths/2`` per axis, i.e. the sine argument is measured
    from the domain center.  ``lengths`` defaults to the hull extents
    ``(counts-1)*spacing``.  Requires ``amplitude*pi < 1`` so the axis maps
    stay strictly monotone.
    """
    if g.rotation is not None:
        raise GridError("cannot perturb a rotated grid")
    if g.perturb_amplitude > 0.0:
        raise GridError("grid is already perturbed")
    if amplitude * math.pi >= 1.0:
        raise GridError(f"amplitude*pi must be < 1, got amplitude={amplitude}")
    if lengths is None:
        lengths = tuple((n - 1) * h for n, h in zip(g.counts, g.spacing))
    lengths = _as_tuple(lengths, g.dim, "lengths")
    center = tuple(o + 0.5 * L for o, L in zip(g.origin, lengths))
    if amplitude == 0.0:
        return g
    return replace(g, perturb_amplitude=float(amplitude), perturb_center=center)


def split_fine_grid(fine: Grid, factor) -> list[Grid]:
    """Split a fine grid into ``prod(factor)`` interleaved coarser subgrids.

    Subgrid ``s`` takes every ``factor``-th node starting at offset ``s`` per
    axis, so the subgrid node sets partition the fine node set exactly and
    each subgrid has spacing ``factor * fine.spacing``.
    """
    if fine.rotation is not None or fine.perturb_amplitude > 0.0:
        raise GridError("split_fine_grid requires a uniform or shifted grid")
    if np.ndim(factor) == 0:
        factor = (int(factor),) * fine.dim
    factor = tuple(int(f) for f in factor)
    if len(factor) != fine.dim or any(f < 1 for f in factor):
        raise GridError(f"factor must be >= 1 per axis, got {factor}")
    for a, (n, f) in enumerate(zip(fine.counts, factor)):
        # the subgrid at offset f-1 is the smallest: n // f nodes
        if n // f < 2:
            raise GridError(
                f"factor {f} leaves a subgrid with < 2 nodes on axis {a} (n={n})"
            )
    subgrids = []
    for flat in range(int(np.prod(factor))):
        offs, rem = [], flat
        for f in factor:
            offs.append(rem % f)
            rem //= f
        counts = tuple(
            (n - o + f - 1) // f for n, o, f in zip(fine.counts, offs, factor)
        )
        origin = tuple(
            og + o * h for og, o, h in zip(fine.origin, offs, fine.spacing)
        )
        spacing = tuple(f * h for f, h in zip(factor, fine.spacing))
        subgrids.append(Grid(counts=counts, spacing=spacing, origin=origin))
    return subgrids


def locate_cell(g: Grid, p) -> CellLocation:
    """Locate physical point(s) ``p`` in ``g``; see :meth:`Grid.locate`."""
    return g.locate(p)
