"""Planar convex sets: boxes, zonotopes and H-polytopes.

Zonotopes are the working representation (closed under linear maps and
Minkowski sums). H-polytopes appear only as the result of a Pontryagin
difference and as QP constraint rows. All sets are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import linprog

from . import _kernels

SLACK = 1e-9
_DIR_TOL = 1e-12


class SetError(Exception):
    pass


class EmptyResult(SetError):
    """A Pontryagin difference came out empty."""


class NoConvergence(SetError):
    """RPI iteration hit its cap before the contraction test passed."""


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _frozen(self.lo, (2,)))
        object.__setattr__(self, "hi", _frozen(self.hi, (2,)))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    @classmethod
    def symmetric(cls, half_width) -> "Box":
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (2,))
        return cls(-hw, hw)

    @property
    def empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def contains_box(self, other: "Box", slack: float = SLACK) -> bool:
        return bool(np.all(self.lo <= other.lo + slack) and np.all(other.hi <= self.hi + slack))

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


@dataclass(frozen=True)
class Zonotope:
    center: np.ndarray
    generators: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, (2,)))
        object.__setattr__(self, "generators", _frozen(self.generators, (-1, 2)))

    @classmethod
    def point(cls, p=(0.0, 0.0)) -> "Zonotope":
        return cls(p, np.zeros((0, 2)))

    @property
    def order(self) -> int:
        return self.generators.shape[0]

    def reduced(self) -> "Zonotope":
        return Zonotope(self.center, merge_parallel(self.generators))


@dataclass(frozen=True)
class HPolytope:
    """{x : H x <= h}. ``empty`` is decided once, at construction, by an LP."""

    H: np.ndarray
    h: np.ndarray
    empty: bool = None

    def __post_init__(self):
        H = _frozen(self.H, (-1, 2))
        h = _frozen(self.h, (-1,))
        if H.shape[0] != h.shape[0]:
            raise ValueError("H and h row counts differ")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        if self.empty is None:
            _, radius = chebyshev_center(self)
            object.__setattr__(self, "empty", bool(radius < -SLACK))


ConvexSet = Union[Box, Zonotope, HPolytope]


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------


def merge_parallel(gens: np.ndarray) -> np.ndarray:
    """Lossless zonotope order reduction: sum generators that share a direction."""
    gens = np.asarray(gens, dtype=float).reshape(-1, 2)
    norms = np.hypot(gens[:, 0], gens[:, 1])
    scale = norms.max() if norms.size else 0.0
    keep = norms > max(1e-15, 1e-14 * scale)
    gens, norms = gens[keep], norms[keep]
    if gens.shape[0] <= 1:
        return gens
    # canonical sign: angle in [0, pi)
    flip = (gens[:, 1] < 0) | ((gens[:, 1] == 0) & (gens[:, 0] < 0))
    gens = np.where(flip[:, None], -gens, gens)
    ang = np.arctan2(gens[:, 1], gens[:, 0])
    wrap = ang >= np.pi - _DIR_TOL
    gens[wrap] = -gens[wrap]
    ang[wrap] = ang[wrap] - np.pi
    order = np.argsort(ang, kind="stable")
    out = []
    cur_ang = None
    for i in order:
        if cur_ang is not None and abs(ang[i] - cur_ang) <= _DIR_TOL:
            out[-1] = out[-1] + gens[i]
        else:
            out.append(gens[i].copy())
            cur_ang = ang[i]
    return np.array(out)


def as_zonotope(s: ConvexSet) -> Zonotope:
    if isinstance(s, Zonotope):
        return s
    if isinstance(s, Box):
        if s.empty:
            raise EmptyResult("cannot convert an empty box")
        hw = s.half_widths
        gens = np.diag(hw)[hw > 0]
        return Zonotope(s.center, gens)
    raise TypeError(f"{type(s).__name__} has no zonotope form")


def as_hpoly(s: ConvexSet) -> HPolytope:
    if isinstance(s, HPolytope):
        return s
    if isinstance(s, Box):
        H = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        h = np.concatenate([s.hi, -s.lo])
        return HPolytope(H, h, empty=s.empty)
    if isinstance(s, Zonotope):
        gens = merge_parallel(s.generators)
        normals = []
        for g in gens:
            n = np.array([-g[1], g[0]]) / np.hypot(*g)
            normals.extend([n, -n])
        if gens.shape[0] == 1:
            d = gens[0] / np.hypot(*gens[0])
            normals.extend([d, -d])
        elif gens.shape[0] == 0:
            normals.extend(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]))
        H = np.array(normals)
        h = _kernels.zonotope_support(s.center, gens, H)
        return HPolytope(H, h, empty=False)
    raise TypeError(type(s).__name__)


def bounding_box(s: ConvexSet) -> Box:
    axes = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    sup = support(s, axes)
    return Box(-sup[2:], sup[:2])


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def support(s: ConvexSet, dirs) -> np.ndarray:
    """Support function h_s(d) = max_{x in s} d.x for each row of ``dirs``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if isinstance(s, Box):
        return np.maximum(dirs * s.lo, dirs * s.hi).sum(axis=1)
    if isinstance(s, Zonotope):
        return _kernels.zonotope_support(s.center, s.generators, dirs)
    if isinstance(s, HPolytope):
        if s.empty:
            return np.full(dirs.shape[0], -np.inf)
        out = np.empty(dirs.shape[0])
        for k, d in enumerate(dirs):
            res = linprog(-d, A_ub=s.H, b_ub=s.h, bounds=[(None, None)] * 2, method="highs")
            out[k] = np.inf if res.status == 3 else -res.fun
        return out
    raise TypeError(type(s).__name__)


def minkowski_sum(a: ConvexSet, b: ConvexSet) -> Zonotope:
    za, zb = as_zonotope(a), as_zonotope(b)
    return Zonotope(za.center + zb.center, np.vstack([za.generators, zb.generators])).reduced()


def linear_map(M, s: ConvexSet) -> Zonotope:
    M = np.asarray(M, dtype=float).reshape(2, 2)
    z = as_zonotope(s)
    return Zonotope(M @ z.center, z.generators @ M.T).reduced()


def pontryagin_diff(outer: ConvexSet, inner: ConvexSet, strict: bool = False) -> HPolytope:
    """outer minus inner: {x : x + inner subset of outer}.

    Exact for polytopic ``outer``: every row offset shrinks by the support of
    ``inner`` in that row's direction. An empty result is flagged, or raised
    as :class:`EmptyResult` when ``strict``.
    """
    P = as_hpoly(outer)
    h = P.h - support(inner, P.H)
    out = HPolytope(P.H, h)
    if strict and out.empty:
        raise EmptyResult("Pontryagin difference is empty")
    return out


def contains(s: ConvexSet, x, slack: float = SLACK) -> bool:
    return bool(contains_points(s, np.atleast_2d(x), slack)[0])


def contains_points(s: ConvexSet, pts, slack: float = SLACK) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if isinstance(s, Box):
        return np.all((pts >= s.lo - slack) & (pts <= s.hi + slack), axis=1)
    P = as_hpoly(s)
    if P.empty:
        return np.zeros(pts.shape[0], dtype=bool)
    return _kernels.hpoly_contains(P.H, P.h, pts, slack)


def chebyshev_center(P: HPolytope):
    """Largest inscribed ball; a negative radius means the polytope is empty."""
    H, h = np.asarray(P.H), np.asarray(P.h)
    if H.shape[0] == 0:
        return np.zeros(2), np.inf
    norms = np.hypot(H[:, 0], H[:, 1])
    A = np.hstack([H, norms[:, None]])
    res = linprog(
        [0.0, 0.0, -1.0],
        A_ub=A,
        b_ub=h,
        bounds=[(None, None), (None, None), (None, 1e6)],
        method="highs",
    )
    if res.status != 0:
        raise SetError(f"Chebyshev LP failed: {res.message}")
    return res.x[:2], float(res.x[2])


def is_subset(a: ConvexSet, b: ConvexSet, slack: float = SLACK) -> bool:
    """a subset of b, via supports of a along b's facet normals."""
    P = as_hpoly(b)
    if P.empty:
        return False
    return bool(np.all(support(a, P.H) <= P.h + slack))


def radius_inf(s: ConvexSet) -> float:
    axes = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return float(np.max(np.abs(support(s, axes))))


def rpi_outer_approx(A_cl, D: ConvexSet, tol: float = 1e-4, max_iter: int = 1000) -> Zonotope:
    """Outer approximation of the minimal robust positive invariant set.

    Finds the smallest k with A^k D inside alpha*D and
    alpha/(1-alpha) * radius(S_k) <= tol, where S_k = D + A D + ... + A^{k-1} D,
    and returns S_k / (1 - alpha). The result R satisfies A R + D subset R.
    """
    A = np.asarray(A_cl, dtype=float).reshape(2, 2)
    rho = max(abs(np.linalg.eigvals(A)))
    if rho >= 1.0:
        raise ValueError(f"A_cl is not Schur stable (spectral radius {rho:.6g})")
    Dz = as_zonotope(D).reduced()
    if Dz.order == 0:
        if np.any(Dz.center != 0):
            raise ValueError("disturbance set must contain the origin")
        return Zonotope.point()
    if np.linalg.matrix_rank(Dz.generators, tol=1e-14) < 2:
        # no interior: pad by a negligible box so the contraction test is defined
        Dz = minkowski_sum(Dz, Box.symmetric(1e-12))
    DH = as_hpoly(Dz)
    if np.any(DH.h <= 0):
        raise ValueError("disturbance set must contain the origin in its interior")

    S = Dz
    Ak = np.eye(2)
    for k in range(1, max_iter + 1):
        Ak = A @ Ak
        AkD = linear_map(Ak, Dz)
        alpha = float(np.max(support(AkD, DH.H) / DH.h))
        alpha = max(alpha, 0.0)
        if alpha < 1.0 and alpha / (1.0 - alpha) * radius_inf(S) <= tol:
            scale = 1.0 / (1.0 - alpha)
            return Zonotope(S.center * scale, S.generators * scale)
        S = minkowski_sum(S, AkD)
    raise NoConvergence(f"no contraction within {max_iter} terms (spectral radius {rho:.4f})")


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def to_dict(s: ConvexSet) -> dict:
    if isinstance(s, Box):
        return {"type": "box", "lo": s.lo.tolist(), "hi": s.hi.tolist()}
    if isinstance(s, Zonotope):
        return {"type": "zonotope", "center": s.center.tolist(), "generators": s.generators.tolist()}
    if isinstance(s, HPolytope):
        return {"type": "hpoly", "H": s.H.tolist(), "h": s.h.tolist(), "empty": s.empty}
    raise TypeError(type(s).__name__)


def from_dict(d: dict) -> ConvexSet:
    kind = d.get("type")
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "zonotope":
        return Zonotope(d["center"], np.asarray(d["generators"], dtype=float).reshape(-1, 2))
    if kind == "hpoly":
        return HPolytope(d["H"], d["h"], empty=d.get("empty"))
    raise ValueError(f"unknown set type {kind!r}")
