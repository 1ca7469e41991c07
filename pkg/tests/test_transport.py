import numpy as np
import pytest
from scipy.optimize import linprog

from mfclab.errors import BudgetExceeded, DimensionUnsupported
from mfclab.spectral import empirical, lebesgue, to_density
from mfclab.transport import (
    PointCloud,
    euclidean_distance_matrix,
    gaussian_product_quantile_cloud,
    gaussian_quantile_cloud,
    sorted_w1_1d,
    torus_distance_matrix,
    uniform_torus_quantile_cloud,
    w1_approx,
    w1_circle,
    w1_discrete,
)

from mfclab.spectral import random_measure


# --- independent oracle: dense LP -------------------------------------------

def lp_transport_oracle(cost, a, b):
    """Exact OT value by the full dense LP (equality-constrained linprog)."""
    na, nb = cost.shape
    A_eq = []
    for i in range(na):
        row = np.zeros((na, nb))
        row[i, :] = 1.0
        A_eq.append(row.ravel())
    for j in range(nb):
        col = np.zeros((na, nb))
        col[:, j] = 1.0
        A_eq.append(col.ravel())
    A_eq = np.array(A_eq)
    b_eq = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


# --- w1_circle ---------------------------------------------------------------

def test_w1_circle_identical_measures(rng):
    m = random_measure(1, 6, rng)
    assert w1_circle(m, m) < 1e-12


def test_w1_circle_antipodal_diracs():
    a = PointCloud(1, [[0.0]])
    b = PointCloud(1, [[0.5]])
    assert abs(w1_circle(a, b) - 0.5) < 1e-14


def test_w1_circle_wraparound():
    a = PointCloud(1, [[0.0]])
    b = PointCloud(1, [[0.9]])
    assert abs(w1_circle(a, b) - 0.1) < 1e-14


def test_w1_circle_rejects_2d():
    with pytest.raises(DimensionUnsupported):
        w1_circle(lebesgue(2, 3), lebesgue(2, 3))


def test_w1_circle_atoms_vs_uniform_exact():
    # two antipodal atoms vs Lebesgue: by symmetry each atom collects mass
    # 1/2 from its half-circle; cost = 2 * 2*int_0^{1/4} t dt = 1/8
    pc = PointCloud(1, [[0.0], [0.5]])
    got = w1_circle(pc, lebesgue(1, 4))
    assert abs(got - 0.125) < 1e-14


def test_w1_circle_atoms_vs_uniform_matches_discrete_quantization(rng):
    pts = rng.uniform(size=7)
    exact = w1_circle(PointCloud(1, pts[:, None]), lebesgue(1, 4))
    # oracle: quantize Lebesgue very finely and solve the atomic problem
    quant, _ = uniform_torus_quantile_cloud(1, 4096)
    approx = w1_circle(PointCloud(1, pts[:, None]), quant)
    assert abs(exact - approx) < 1e-3


def test_w1_circle_smooth_measures_match_atom_quantization(rng):
    m1 = random_measure(1, 4, rng)
    m2 = random_measure(1, 4, rng)
    got = w1_circle(m1, m2)
    # oracle: quantize both densities onto a fine grid and sweep atoms
    n = 4096
    x = (np.arange(n) + 0.5) / n
    w1 = to_density(m1, n).values
    w2 = to_density(m2, n).values
    w1 = np.maximum(w1, 0); w1 /= w1.sum()
    w2 = np.maximum(w2, 0); w2 /= w2.sum()
    ref = w1_circle(PointCloud(1, x[:, None], w1), PointCloud(1, x[:, None], w2))
    assert abs(got - ref) < 2e-3


def test_w1_circle_symmetry_and_triangle(rng):
    ms = [random_measure(1, 5, rng) for _ in range(3)]
    d01 = w1_circle(ms[0], ms[1])
    d10 = w1_circle(ms[1], ms[0])
    d02 = w1_circle(ms[0], ms[2])
    d12 = w1_circle(ms[1], ms[2])
    assert abs(d01 - d10) < 1e-9
    assert d02 <= d01 + d12 + 1e-9


def test_fejer_contraction_on_circle(rng):
    # convolution by the Fejer kernel contracts d_1
    from mfclab.regularize import FejerKernel
    for _ in range(5):
        m1 = random_measure(1, 6, rng)
        m2 = random_measure(1, 6, rng)
        ker = FejerKernel(rank=4, dim=1)
        c1 = ker.convolve(m1)
        c2 = ker.convolve(m2)
        assert w1_circle(c1, c2) <= w1_circle(m1, m2) + 1e-9


def test_fejer_mollification_converges_in_d1(rng):
    from mfclab.regularize import FejerKernel
    m = random_measure(1, 8, rng)
    dists = [w1_circle(FejerKernel(rank=n, dim=1).convolve(m), m)
             for n in [2, 4, 8, 16]]
    assert dists[-1] < dists[0]
    assert dists[-1] < 0.05


# --- w1_discrete -------------------------------------------------------------

def test_w1_discrete_identical_clouds(rng):
    pts = rng.uniform(size=(8, 2))
    pc = PointCloud(2, pts)
    assert w1_discrete(pc, pc, metric="euclidean") < 1e-12


def test_w1_discrete_two_points_1d():
    a = PointCloud(1, [[0.0]])
    b = PointCloud(1, [[0.3]])
    assert abs(w1_discrete(a, b, metric="euclidean") - 0.3) < 1e-15


def test_w1_discrete_matches_lp_oracle_uniform(rng):
    pts_a = rng.uniform(size=(50, 2))
    pts_b = rng.uniform(size=(50, 2))
    a, b = PointCloud(2, pts_a), PointCloud(2, pts_b)
    got = w1_discrete(a, b, metric="euclidean")
    cost = euclidean_distance_matrix(pts_a, pts_b)
    oracle = lp_transport_oracle(cost, a.weights, b.weights)
    assert abs(got - oracle) < 1e-9


def test_w1_discrete_matches_lp_oracle_weighted(rng):
    pts_a = rng.uniform(size=(11, 2))
    pts_b = rng.uniform(size=(13, 2))
    wa = rng.uniform(0.5, 1.5, size=11)
    wa /= wa.sum()
    wb = rng.uniform(0.5, 1.5, size=13)
    wb /= wb.sum()
    a = PointCloud(2, pts_a, wa)
    b = PointCloud(2, pts_b, wb)
    got = w1_discrete(a, b, metric="euclidean")
    oracle = lp_transport_oracle(
        euclidean_distance_matrix(pts_a, pts_b), wa, wb)
    assert abs(got - oracle) < 1e-9


def test_w1_discrete_weighted_torus_matches_lp_oracle(rng):
    pts_a = rng.uniform(size=(9, 2))
    pts_b = rng.uniform(size=(12, 2))
    wa = rng.dirichlet(np.ones(9))
    wb = rng.dirichlet(np.ones(12))
    a = PointCloud(2, pts_a, wa)
    b = PointCloud(2, pts_b, wb)
    got = w1_discrete(a, b, metric="torus")
    oracle = lp_transport_oracle(
        torus_distance_matrix(pts_a, pts_b), wa, wb)
    assert abs(got - oracle) < 1e-9


def test_w1_discrete_1d_sort_matches_lp(rng):
    xa = rng.uniform(size=6)
    xb = rng.uniform(size=9)
    wa = rng.dirichlet(np.ones(6))
    wb = rng.dirichlet(np.ones(9))
    got = sorted_w1_1d(xa, wa, xb, wb)
    oracle = lp_transport_oracle(
        np.abs(xa[:, None] - xb[None, :]), wa, wb)
    assert abs(got - oracle) < 1e-10


def test_w1_discrete_budget():
    a = PointCloud(1, np.zeros((3000, 1)))
    b = PointCloud(1, np.ones((3000, 1)))
    with pytest.raises(BudgetExceeded):
        w1_discrete(a, b, metric="euclidean", budget=1000)


def test_w1_discrete_symmetry_triangle(rng):
    clouds = [PointCloud(2, rng.uniform(size=(15, 2))) for _ in range(3)]
    d01 = w1_discrete(clouds[0], clouds[1], metric="torus")
    d10 = w1_discrete(clouds[1], clouds[0], metric="torus")
    d02 = w1_discrete(clouds[0], clouds[2], metric="torus")
    d12 = w1_discrete(clouds[1], clouds[2], metric="torus")
    assert abs(d01 - d10) < 1e-9
    assert d02 <= d01 + d12 + 1e-9


def test_circle_formula_matches_assignment(rng):
    # the CDF-median formula and the assignment solver answer the same
    # question on matched uniform clouds
    pts_a = rng.uniform(size=16)
    pts_b = rng.uniform(size=16)
    a = PointCloud(1, pts_a[:, None])
    b = PointCloud(1, pts_b[:, None])
    d_formula = w1_discrete(a, b, metric="torus")
    cost = torus_distance_matrix(a.points, b.points)
    from scipy.optimize import linear_sum_assignment
    rows, cols = linear_sum_assignment(cost)
    assert abs(d_formula - cost[rows, cols].mean()) < 1e-12


# --- w1_approx ---------------------------------------------------------------

def test_w1_approx_identical_clouds(rng):
    pts = rng.uniform(size=(20, 2))
    pc = PointCloud(2, pts)
    eps = 0.01
    est = w1_approx(pc, pc, eps_reg=eps)
    assert est <= eps * np.log(20) + 1e-9


def test_w1_approx_upper_bound_and_gap_1d(rng):
    xa = rng.uniform(size=25)
    xb = rng.uniform(size=25)
    a = PointCloud(1, xa[:, None])
    b = PointCloud(1, xb[:, None])
    exact = sorted_w1_1d(xa, a.weights, xb, b.weights)
    eps = 0.02
    est = w1_approx(a, b, eps_reg=eps)
    assert est >= exact - 1e-10
    assert est - exact <= 3 * eps * np.log(25)


def test_w1_approx_converges_to_exact(rng):
    pts_a = rng.uniform(size=(30, 2))
    pts_b = rng.uniform(size=(30, 2))
    a, b = PointCloud(2, pts_a), PointCloud(2, pts_b)
    exact = w1_discrete(a, b, metric="euclidean")
    gaps = []
    for eps in [0.1, 0.05, 0.025, 0.0125]:
        gaps.append(w1_approx(a, b, eps_reg=eps) - exact)
    assert all(g >= -1e-9 for g in gaps)
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05


# --- quantization helpers ----------------------------------------------------

def test_gaussian_quantile_cloud_error_bound():
    cloud, err = gaussian_quantile_cloud(512, sd=1.0)
    assert cloud.size == 512
    assert 0 < err < 0.01
    # empirical check: heavy i.i.d. sample distance to quantization is small
    rng = np.random.default_rng(0)
    sample = rng.normal(size=20000)
    d = sorted_w1_1d(sample, np.full(20000, 1 / 20000.0),
                     cloud.points[:, 0], cloud.weights)
    assert d < 0.03


def test_gaussian_product_cells():
    cloud, err = gaussian_product_quantile_cloud(2, 8, sd=1.0)
    assert cloud.size == 64
    assert err > 0


def test_uniform_torus_cells():
    cloud, err = uniform_torus_quantile_cloud(3, 4)
    assert cloud.size == 64
    assert abs(err - 3 / 16.0) < 1e-15


def test_w1_approx_nonconvergence(rng):
    pts_a = rng.uniform(size=(12, 2))
    pts_b = rng.uniform(size=(12, 2)) + 5.0
    a, b = PointCloud(2, pts_a), PointCloud(2, pts_b)
    from mfclab.errors import NonConvergence
    with pytest.raises(NonConvergence):
        w1_approx(a, b, eps_reg=1e-4, max_iter=1, fail_tol=1e-12)
