"""Platonic rotation groups, their axes, and twisted boundary matrices.

The three groups (tetrahedral, octahedral, icosahedral; orders 12, 24, 60)
are generated from two explicit rotation matrices by closure under
multiplication.  The union of the rotation axes of the non-identity
elements is the set of lines on which symmetric configurations suffer
partial collisions, so seed curves and orbits must keep clear of it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

GROUP_ORDERS = {"tetrahedral": 12, "octahedral": 24, "icosahedral": 60}
AXIS_COUNTS = {"tetrahedral": 7, "octahedral": 13, "icosahedral": 31}

_KEY_DECIMALS = 8
_TOL = 1e-12


@dataclass(frozen=True)
class RotationElement:
    """One rotation: its matrix, axis line, angle in (0, 2pi), and order.

    The identity carries ``axis=None`` and ``angle=0.0``.  Axes are unit
    vectors canonicalized so their first nonzero coordinate is positive;
    flipping the axis is compensated by ``angle -> 2pi - angle``.
    """

    matrix: np.ndarray
    axis: np.ndarray | None
    angle: float
    order: int

    @property
    def is_identity(self) -> bool:
        return self.axis is None


@dataclass(frozen=True)
class PolyhedralGroup:
    """A Platonic rotation group with deterministic element ordering."""

    kind: str
    elements: tuple[RotationElement, ...]
    axes: np.ndarray  # (n_axes, 3) unit vectors, antipodes identified

    def __post_init__(self):
        object.__setattr__(self, "_index", {
            _matrix_key(e.matrix): i for i, e in enumerate(self.elements)
        })

    def __len__(self) -> int:
        return len(self.elements)

    def matrix_stack(self) -> np.ndarray:
        """All element matrices stacked into one (|G|, 3, 3) array."""
        return np.array([e.matrix for e in self.elements])

    def element_index(self, matrix: np.ndarray) -> int:
        """Index of the element equal to ``matrix`` (tolerance 1e-12)."""
        key = _matrix_key(matrix)
        try:
            return self._index[key]
        except KeyError:
            raise KeyError("matrix is not a group element") from None

    def contains(self, matrix: np.ndarray) -> bool:
        return _matrix_key(matrix) in self._index

    def multiplication_table(self) -> np.ndarray:
        """(n, n) table of product element indices: table[i, j] = idx(g_i g_j)."""
        n = len(self.elements)
        table = np.empty((n, n), dtype=np.int64)
        for i, a in enumerate(self.elements):
            for j, b in enumerate(self.elements):
                table[i, j] = self.element_index(a.matrix @ b.matrix)
        return table

    def table_checksum(self) -> str:
        """Hex digest of the multiplication table, stable across runs."""
        return hashlib.sha256(self.multiplication_table().tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class TwistSpec:
    """Boundary twist: rotation R applied M times closes the full period.

    ``S`` is the 6x6 block-diagonal matrix diag(R, R) acting on position
    and velocity blocks simultaneously.
    """

    twist: RotationElement
    repetitions: int
    S: np.ndarray


def _matrix_key(matrix: np.ndarray) -> tuple:
    # +0.0 normalizes -0.0 so keys match across computation paths
    return tuple((np.round(np.asarray(matrix), _KEY_DECIMALS) + 0.0).ravel())


def _polish_rotation(matrix: np.ndarray) -> np.ndarray:
    """Project onto the nearest proper rotation (kills closure drift)."""
    u, _, vt = np.linalg.svd(matrix)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rotation matrix about ``axis`` (need not be unit) by ``angle`` radians."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


_GENERATORS = {
    # pi about z; 2pi/3 about the (1,1,1) diagonal (cyclic coordinate roll)
    "tetrahedral": (
        np.diag([-1.0, -1.0, 1.0]),
        np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    ),
    # pi/2 about z; 2pi/3 about the diagonal
    "octahedral": (
        np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    ),
}


def _icosahedral_generators() -> tuple[np.ndarray, np.ndarray]:
    # vertex axis of the icosahedron with vertex set cyclic{(0, +-1, +-phi)}
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    five_fold = rotation_about((0.0, 1.0, phi), 2.0 * np.pi / 5.0)
    three_fold = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return five_fold, three_fold


def _close_under_multiplication(generators) -> list[np.ndarray]:
    seen: dict[tuple, np.ndarray] = {}
    frontier = [np.eye(3)]
    seen[_matrix_key(np.eye(3))] = np.eye(3)
    while frontier:
        fresh = []
        for m in frontier:
            for g in generators:
                prod = _polish_rotation(g @ m)
                key = _matrix_key(prod)
                if key not in seen:
                    seen[key] = prod
                    fresh.append(prod)
        frontier = fresh
    return list(seen.values())


def _analyze(matrix: np.ndarray, max_order: int) -> RotationElement:
    trace = np.clip((np.trace(matrix) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(trace))
    # arccos near +-1 turns 1e-15 roundoff into ~1e-7 angle error; the
    # smallest true angle in these groups is 2pi/5, so 1e-6 is safe
    if angle < 1e-6:
        return RotationElement(matrix=matrix, axis=None, angle=0.0, order=1)

    if abs(angle - np.pi) < 1e-6:
        # matrix = 2 a a^T - I; pick the strongest column of a a^T
        outer = (matrix + np.eye(3)) / 2.0
        col = int(np.argmax(np.diag(outer)))
        axis = outer[:, col] / np.linalg.norm(outer[:, col])
        angle = np.pi
    else:
        axis = np.array([
            matrix[2, 1] - matrix[1, 2],
            matrix[0, 2] - matrix[2, 0],
            matrix[1, 0] - matrix[0, 1],
        ]) / (2.0 * np.sin(angle))
        axis = axis / np.linalg.norm(axis)

    axis = np.where(np.abs(axis) < 1e-12, 0.0, axis)
    first = np.nonzero(np.abs(axis) > 1e-8)[0][0]
    if axis[first] < 0:
        axis = -axis
        if abs(angle - np.pi) > 1e-9:
            angle = 2.0 * np.pi - angle

    power = matrix.copy()
    order = 1
    while not np.allclose(power, np.eye(3), atol=1e-10):
        power = power @ matrix
        order += 1
        if order > max_order:
            raise RuntimeError("element order exceeds the group order")
    return RotationElement(matrix=matrix, axis=axis, angle=angle, order=order)


def build_group(kind: str) -> PolyhedralGroup:
    """Construct one of the three Platonic rotation groups.

    Elements are ordered identity-first, then by rotation angle and
    lexicographic axis, so orbit labels are reproducible across runs.
    """
    if kind not in GROUP_ORDERS:
        raise ValueError(
            f"unknown group kind {kind!r}; expected one of {sorted(GROUP_ORDERS)}"
        )
    if kind == "icosahedral":
        generators = _icosahedral_generators()
    else:
        generators = _GENERATORS[kind]

    matrices = _close_under_multiplication(generators)
    expected = GROUP_ORDERS[kind]
    if len(matrices) != expected:
        raise RuntimeError(
            f"closure produced {len(matrices)} elements, expected {expected}"
        )

    elements = [_analyze(m, expected) for m in matrices]
    elements.sort(key=lambda e: (
        round(e.angle, 10),
        tuple(np.round(e.axis, 10)) if e.axis is not None else (0.0, 0.0, 0.0),
    ))
    group = PolyhedralGroup(
        kind=kind,
        elements=tuple(elements),
        axes=collision_axes(elements),
    )
    return group


def collision_axes(group) -> np.ndarray:
    """Distinct rotation-axis lines of the non-identity elements.

    Antipodal vectors are identified (axes are canonicalized with the
    first nonzero coordinate positive).  Returns an (n_axes, 3) array,
    sorted lexicographically; empty for an identity-only input.
    """
    elements = getattr(group, "elements", group)
    uniq: dict[tuple, np.ndarray] = {}
    for e in elements:
        if e.axis is None:
            continue
        uniq[tuple(np.round(e.axis, _KEY_DECIMALS) + 0.0)] = e.axis
    if not uniq:
        return np.zeros((0, 3))
    axes = np.array(sorted(uniq.values(), key=lambda a: tuple(np.round(a, 10))))
    return axes


def twist_matrix(element: RotationElement, repetitions: int) -> TwistSpec:
    """Bundle a rotation and repetition count into the 6x6 boundary matrix."""
    if repetitions < 1:
        raise ValueError("twist repetitions must be a positive integer")
    r = element.matrix
    s = np.zeros((6, 6))
    s[:3, :3] = r
    s[3:, 3:] = r
    return TwistSpec(twist=element, repetitions=int(repetitions), S=s)


def element_about_axis(group: PolyhedralGroup, axis_index: int, turns: float) -> RotationElement:
    """Group element rotating by ``turns`` of a full circle about an axis.

    ``axis_index`` refers to ``group.axes``.  Raises KeyError when no
    element matches (e.g. a quarter turn about a threefold axis).
    """
    axis = group.axes[axis_index]
    target = rotation_about(axis, 2.0 * np.pi * turns)
    return group.elements[group.element_index(target)]


def min_distance_to_gamma(point, group: PolyhedralGroup) -> float:
    """Distance from a point to the nearest rotation-axis line."""
    p = np.asarray(point, dtype=float)
    if np.linalg.norm(p) == 0.0:
        raise ValueError("the origin lies on every axis; distance undefined")
    return float(distances_to_gamma(p[np.newaxis, :], group.axes)[0])


def distances_to_gamma(points: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Vectorized distance from each row of ``points`` to the nearest axis line."""
    pts = np.asarray(points, dtype=float)
    proj = pts @ axes.T  # (npts, naxes)
    sq = np.sum(pts * pts, axis=1)[:, np.newaxis] - proj * proj
    return np.sqrt(np.maximum(sq.min(axis=1), 0.0))
