import itertools

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from kendama import sets
from kendama.sets import Box, EmptyResult, HPolytope, NoConvergence, Zonotope

SLACK = 1e-9


# --- brute-force oracles -------------------------------------------------


def zono_vertices(z: Zonotope) -> np.ndarray:
    g = z.generators
    if g.shape[0] == 0:
        return z.center[None, :]
    signs = np.array(list(itertools.product([-1.0, 1.0], repeat=g.shape[0])))
    return z.center + signs @ g


def hull_contains(points, grid, slack=SLACK):
    """Membership in conv(points) through the hull's facet equations."""
    hull = ConvexHull(points)
    eq = hull.equations
    return np.all(grid @ eq[:, :2].T + eq[:, 2] <= slack, axis=1)


def grid(lo, hi, k=100):
    xs = np.linspace(lo[0], hi[0], k)
    ys = np.linspace(lo[1], hi[1], k)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def random_zonotope(rng, m=None, scale=1.0):
    m = m if m is not None else rng.integers(2, 5)
    return Zonotope(rng.normal(0, 0.3, 2) * scale, rng.normal(0, 1, (m, 2)) * scale)


# --- construction / basics -------------------------------------------------


def test_box_invariants():
    b = Box([-1, -2], [1, 2])
    assert np.allclose(b.center, 0) and np.allclose(b.half_widths, [1, 2])
    assert not b.empty
    assert Box([1, 0], [0, 1]).empty
    assert b.corners().shape == (4, 2)


def test_box_converts_to_four_row_hpolytope():
    b = Box([-1, 0.5], [2, 3])
    H = sets.as_hpoly(b)
    assert H.H.shape == (4, 2)
    pts = np.random.default_rng(0).uniform(-3, 4, size=(2000, 2))
    inside = np.all((pts >= b.lo) & (pts <= b.hi), axis=1)
    assert np.array_equal(sets.contains_points(H, pts), inside)


def test_minkowski_trivial():
    s = sets.minkowski_sum(Box.symmetric(1.0), Box.symmetric(1.0))
    assert np.allclose(sets.bounding_box(s).lo, -2) and np.allclose(sets.bounding_box(s).hi, 2)
    z = sets.minkowski_sum(Zonotope([1, 0], [[1, 0]]), Zonotope([0, 1], [[0, 2]]))
    assert np.allclose(z.center, [1, 1])
    assert {tuple(g) for g in np.abs(z.generators)} == {(1.0, 0.0), (0.0, 2.0)}


def test_pontryagin_trivial():
    d = sets.pontryagin_diff(Box.symmetric(2.0), Box.symmetric(1.0))
    bb = sets.bounding_box(d)
    assert np.allclose(bb.lo, -1) and np.allclose(bb.hi, 1)
    outer = Box([-1, -3], [2, 0.5])
    same = sets.pontryagin_diff(outer, Zonotope.point())
    pts = np.random.default_rng(1).uniform(-4, 4, (3000, 2))
    assert np.array_equal(sets.contains_points(same, pts), sets.contains_points(outer, pts))


def test_pontryagin_empty_flag_and_strict():
    d = sets.pontryagin_diff(Box.symmetric(1.0), Box.symmetric(2.0))
    assert d.empty
    with pytest.raises(EmptyResult):
        sets.pontryagin_diff(Box.symmetric(1.0), Box.symmetric(2.0), strict=True)


def test_linear_map_trivial():
    b = Box([-2, -2], [2, 2])
    same = sets.linear_map(np.eye(2), b)
    assert np.allclose(sets.bounding_box(same).lo, b.lo)
    half = sets.linear_map(0.5 * np.eye(2), b)
    assert np.allclose(sets.bounding_box(half).hi, [1, 1])


def test_linear_map_rotation_vertices():
    b = Box([-1, -1], [2, 1])
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    z = sets.linear_map(R, b)
    got = zono_vertices(z)
    want = b.corners() @ R.T
    hull = ConvexHull(got)
    got_v = {tuple(np.round(got[i], 12)) for i in hull.vertices}
    assert got_v == {tuple(np.round(v, 12)) for v in want}


def test_contains_origin_and_outside():
    for s in (Box.symmetric(0.3), Zonotope([0, 0], [[1, 1], [0.2, -1]]), sets.as_hpoly(Box.symmetric([1, 2]))):
        assert sets.contains(s, [0, 0])
        bb = sets.bounding_box(s)
        assert not sets.contains(s, bb.hi + 0.1)


def test_contains_matches_inequalities():
    rng = np.random.default_rng(2)
    z = random_zonotope(rng, 4)
    P = sets.as_hpoly(z)
    pts = rng.normal(0, 2, (1000, 2))
    direct = np.all(pts @ P.H.T <= P.h + SLACK, axis=1)
    assert np.array_equal(sets.contains_points(z, pts), direct)
    assert np.array_equal(sets.contains_points(P, pts), direct)


def test_support_function_matches_vertices():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = random_zonotope(rng)
        d = rng.normal(size=(50, 2))
        assert np.allclose(sets.support(z, d), (d @ zono_vertices(z).T).max(axis=1))
        P = sets.as_hpoly(z)
        assert np.allclose(sets.support(P, d), sets.support(z, d), atol=1e-7)


def test_merge_parallel_is_lossless():
    g = np.array([[1.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-0.5, -0.5], [-1.0, 1e-17]])
    merged = sets.merge_parallel(g)
    assert merged.shape[0] == 3
    d = np.random.default_rng(4).normal(size=(100, 2))
    full = np.abs(d @ g.T).sum(1)
    assert np.allclose(np.abs(d @ merged.T).sum(1), full)


def test_serialisation_round_trip():
    for s in (Box([-1, 0], [1, 2]), Zonotope([1, 2], [[1, 0], [0.5, 0.5]]), sets.as_hpoly(Box.symmetric(1))):
        back = sets.from_dict(sets.to_dict(s))
        pts = np.random.default_rng(5).uniform(-3, 3, (500, 2))
        assert np.array_equal(sets.contains_points(back, pts), sets.contains_points(s, pts))


def test_hpolytope_emptiness_by_feasibility():
    H = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert HPolytope(H, [1.0, -2.0]).empty  # x <= 1 and x >= 2
    assert not HPolytope(np.vstack([H, [[0, 1], [0, -1]]]), [1, 1, 1, 1]).empty


# --- oracle suites (also exercised at full size by the acceptance test) ---


def minkowski_disagreements(rng) -> int:
    a, b = random_zonotope(rng), random_zonotope(rng)
    s = sets.minkowski_sum(a, b)
    va, vb = zono_vertices(a), zono_vertices(b)
    vsum = (va[:, None, :] + vb[None, :, :]).reshape(-1, 2)
    bb = sets.bounding_box(s)
    pts = grid(bb.lo - 0.2, bb.hi + 0.2)
    return int(np.sum(sets.contains_points(s, pts) != hull_contains(vsum, pts)))


def pontryagin_disagreements(rng) -> int:
    outer = sets.as_hpoly(random_zonotope(rng, scale=2.0))
    inner = random_zonotope(rng, scale=0.3)
    d = sets.pontryagin_diff(outer, inner)
    bb = sets.bounding_box(outer)
    pts = grid(bb.lo, bb.hi)
    # x in result iff every vertex of x + inner lies in outer
    vi = zono_vertices(inner)
    want = np.ones(len(pts), dtype=bool)
    for v in vi:
        want &= sets.contains_points(outer, pts + v)
    got = np.zeros(len(pts), dtype=bool) if d.empty else sets.contains_points(d, pts)
    return int(np.sum(got != want))


def linear_map_disagreements(rng) -> int:
    z = random_zonotope(rng)
    M = rng.normal(size=(2, 2))
    s = sets.linear_map(M, z)
    v = zono_vertices(z) @ M.T
    bb = sets.bounding_box(s)
    pts = grid(bb.lo - 0.2, bb.hi + 0.2)
    return int(np.sum(sets.contains_points(s, pts) != hull_contains(v, pts)))


@pytest.mark.parametrize("oracle", [minkowski_disagreements, pontryagin_disagreements, linear_map_disagreements])
def test_set_ops_match_oracles(oracle):
    rng = np.random.default_rng(10)
    assert sum(oracle(rng) for _ in range(20)) == 0


def test_pontryagin_spec_example():
    outer = Box.symmetric(1.0)
    inner = Zonotope([0, 0], [[1, 0], [0.5, 0.5]])
    d = sets.pontryagin_diff(outer, inner)
    # |x1| <= 1 - 1.5 < 0 makes the result empty
    assert d.empty
    inner = Zonotope([0, 0], [[0.3, 0], [0.2, 0.2]])
    d = sets.pontryagin_diff(outer, inner)
    pts = grid([-1, -1], [1, 1])
    want = np.ones(len(pts), dtype=bool)
    for v in zono_vertices(inner):
        want &= sets.contains_points(outer, pts + v)
    assert np.array_equal(sets.contains_points(d, pts), want)


def test_minkowski_commutes_and_associates():
    rng = np.random.default_rng(11)
    a, b, c = (random_zonotope(rng) for _ in range(3))
    pts = grid([-8, -8], [8, 8], 60)
    ab = sets.contains_points(sets.minkowski_sum(a, b), pts)
    assert np.array_equal(ab, sets.contains_points(sets.minkowski_sum(b, a), pts))
    left = sets.minkowski_sum(sets.minkowski_sum(a, b), c)
    right = sets.minkowski_sum(a, sets.minkowski_sum(b, c))
    assert np.array_equal(sets.contains_points(left, pts), sets.contains_points(right, pts))


def test_diff_then_sum_is_subset():
    rng = np.random.default_rng(12)
    for _ in range(10):
        outer = random_zonotope(rng, scale=2.0)
        inner = random_zonotope(rng, scale=0.3)
        d = sets.pontryagin_diff(outer, inner)
        if d.empty:
            continue
        # (d + inner) subset of outer, sampled at grid points of d plus inner's vertices
        bb = sets.bounding_box(outer)
        pts = grid(bb.lo, bb.hi, 60)
        pts = pts[sets.contains_points(d, pts)]
        for v in zono_vertices(inner):
            assert sets.contains_points(outer, pts + v, slack=1e-7).all()


# --- RPI -------------------------------------------------------------------


def test_rpi_nilpotent_returns_D():
    D = Box([-1, -0.5], [1, 0.5])
    R = sets.rpi_outer_approx(np.zeros((2, 2)), D)
    bb = sets.bounding_box(R)
    assert np.allclose(bb.lo, D.lo) and np.allclose(bb.hi, D.hi)


@pytest.mark.parametrize("a", [0.5, 0.9, -0.7])
def test_rpi_geometric_series(a):
    tol = 1e-4
    R = sets.rpi_outer_approx(a * np.eye(2), Box.symmetric(1.0), tol)
    bb = sets.bounding_box(R)
    exact = 1.0 / (1.0 - abs(a))
    assert np.all(bb.hi >= exact - 1e-12) and np.all(bb.hi <= exact + tol)
    assert sets.is_subset(Box.symmetric(exact), R)


def rpi_violations(rng, samples=10_000) -> int:
    while True:
        A = rng.normal(size=(2, 2))
        rho = max(abs(np.linalg.eigvals(A)))
        if rho > 1e-3:
            A *= rng.uniform(0.2, 0.9) / rho
            break
    D = Box(-rng.uniform(0.05, 1, 2), rng.uniform(0.05, 1, 2))
    R = sets.rpi_outer_approx(A, D, 1e-4)
    # x sampled from R through its generator parameterisation
    lam = rng.uniform(-1, 1, (samples, R.generators.shape[0]))
    x = R.center + lam @ R.generators
    d = rng.uniform(D.lo, D.hi, (samples, 2))
    # include extreme points of D too
    d[: samples // 4] = D.corners()[rng.integers(0, 4, samples // 4)]
    return int(np.sum(~sets.contains_points(R, x @ A.T + d, slack=SLACK)))


def test_rpi_invariance_sampling():
    rng = np.random.default_rng(20)
    assert sum(rpi_violations(rng, 5000) for _ in range(10)) == 0


def test_rpi_point_disturbance_and_no_convergence():
    R = sets.rpi_outer_approx(0.5 * np.eye(2), Zonotope.point())
    assert np.allclose(sets.bounding_box(R).hi, 0)
    with pytest.raises(NoConvergence):
        sets.rpi_outer_approx(0.9999 * np.eye(2), Box.symmetric(1.0), 1e-4, max_iter=10)
    with pytest.raises(ValueError):
        sets.rpi_outer_approx(1.1 * np.eye(2), Box.symmetric(1.0))
