import numpy as np
import pytest

from mfclab.errors import NoDerivative
from mfclab.functionals import (
    check_semiconcavity,
    constant_functional,
    cylindrical_functional,
    distance_cost_functional,
    intrinsic_gradient,
    intrinsic_gradient_at,
    laplacian_residual,
    linear_functional,
    project,
    projection_gradient_check,
)
from mfclab.spectral import (
    GridField,
    SobolevWeight,
    empirical,
    lebesgue,
    random_measure,
    to_density,
)
from mfclab.transport import PointCloud



def cos_field(n=64, k=1):
    x = np.arange(n) / n
    return GridField(1, np.cos(2 * np.pi * k * x))


def make_square_functional(cutoff=6, n=64, k=1, sobolev=None):
    """Phi(m) = (m(phi))^2 with phi = cos(2 pi k x)."""
    phi = cos_field(n, k)
    return cylindrical_functional(
        [phi], outer=lambda v: v[0] ** 2,
        outer_grad=lambda v: np.array([2 * v[0]]),
        cutoff=cutoff, sobolev=sobolev,
        outer_grad_bound=2.0, outer_hess_bound=2.0,
    )


# --- flat derivative normalization and consistency ---------------------------

def test_flat_derivative_mean_zero(rng):
    sq = make_square_functional()
    m = random_measure(1, 6, rng)
    g = sq.derivative(m)
    assert abs(g.mean()) < 1e-10


def test_directional_derivative_consistency(rng):
    # (d/dlam) Phi(lam m' + (1-lam) m) at 0 matches the pairing of the flat
    # derivative against m' - m  [finite-difference oracle]
    sq = make_square_functional()
    m = random_measure(1, 6, rng)
    mp = random_measure(1, 6, rng)
    lam = 1e-5
    fd = (sq(m.mix(mp, lam)) - sq(m)) / lam
    g = sq.derivative(m)
    dens_diff = to_density(mp - m, g.resolution)
    pairing = float((g.values * dens_diff.values).mean())
    assert abs(fd - pairing) < 1e-4


def test_segment_integration_reproduces_increment(rng):
    # midpoint-rule integration of the derivative along the segment
    # reproduces Phi(m2) - Phi(m1)
    sq = make_square_functional()
    for _ in range(5):
        m1 = random_measure(1, 6, rng)
        m2 = random_measure(1, 6, rng)
        nq = 64
        total = 0.0
        for j in range(nq):
            lam = (j + 0.5) / nq
            g = sq.derivative(m1.mix(m2, lam))
            diff = to_density(m2 - m1, g.resolution)
            total += (g.values * diff.values).mean() / nq
        assert abs(total - (sq(m2) - sq(m1))) < 1e-10


# --- intrinsic gradient -------------------------------------------------------

def test_intrinsic_gradient_linear_functional():
    phi = cos_field()
    lin = linear_functional(phi, cutoff=6)
    m = lebesgue(1, 6)
    grad = intrinsic_gradient(lin, m)
    x = np.arange(64) / 64
    np.testing.assert_allclose(grad[0], -2 * np.pi * np.sin(2 * np.pi * x),
                               atol=1e-10)


def test_intrinsic_gradient_constant_zero():
    c = constant_functional(1, 4, 3.14)
    m = lebesgue(1, 4)
    assert np.abs(intrinsic_gradient(c, m)).max() < 1e-14


def test_intrinsic_gradient_matches_finite_difference(rng):
    # cylindrical Phi: D_m Phi along Dirac-perturbation directions matches
    # central finite differences of evaluate  [finite-difference oracle]
    sq = make_square_functional()
    m = random_measure(1, 6, rng)
    y = 0.3
    eps = 1e-6
    lam = 1e-4
    # derivative of lam -> Phi((1-lam) m + lam delta_y) equals
    # dPhi/dm(m, y) - int dPhi/dm dm; its y-derivative is D_m Phi(m, y)
    def flat_at(yy):
        dirac = empirical([yy], cutoff=6)
        up = sq(m.mix(dirac, lam))
        return (up - sq(m)) / lam

    fd = (flat_at(y + eps) - flat_at(y - eps)) / (2 * eps)
    exact = intrinsic_gradient_at(sq, m, np.array([[y]]))[0, 0]
    assert abs(fd - exact) / max(abs(exact), 1) < 1e-2


# --- projections --------------------------------------------------------------

def test_project_mass_functional():
    c = constant_functional(1, 4, 1.0)
    assert project(c, [0.1, 0.5, 0.9]) == 1.0


def test_project_linear_is_particle_mean(rng):
    phi = cos_field()
    lin = linear_functional(phi, cutoff=8)
    pts = rng.uniform(size=5)
    got = project(lin, pts)
    assert abs(got - np.mean(np.cos(2 * np.pi * pts))) < 1e-12


def test_project_permutation_invariant(rng):
    sq = make_square_functional()
    pts = rng.uniform(size=6)
    a = project(sq, pts)
    b = project(sq, pts[::-1].copy())
    assert abs(a - b) < 1e-14


def test_projection_gradient_linear_tight(rng):
    phi = cos_field()
    lin = linear_functional(phi, cutoff=8)
    pts = rng.uniform(size=4)
    disc = projection_gradient_check(lin, pts, i=1, step=1e-5)
    assert disc < 1e-8


def test_projection_gradient_second_order(rng):
    # discrepancy scales as O(step^2): slope 2 +- 0.3 under step halving
    sq = make_square_functional(cutoff=8)
    pts = rng.uniform(size=8)
    steps = np.array([2e-3, 1e-3, 5e-4, 2.5e-4])
    discs = np.array([
        max(projection_gradient_check(sq, pts, i=2, step=s), 1e-300)
        for s in steps
    ])
    slope = np.polyfit(np.log(steps), np.log(discs), 1)[0]
    assert abs(slope - 2.0) < 0.3


def test_projection_gradient_n1_linear():
    phi = cos_field()
    lin = linear_functional(phi, cutoff=8)
    disc = projection_gradient_check(lin, [0.37], i=0, step=1e-5)
    assert disc < 1e-8


def test_projection_gradient_requires_derivative():
    dc = distance_cost_functional(PointCloud(1, [[0.2]]), cutoff=4)
    with pytest.raises(NoDerivative):
        projection_gradient_check(dc, [0.1, 0.6], i=0)


# --- laplacian residual -------------------------------------------------------

def test_laplacian_residual_linear_zero(rng):
    phi = cos_field()
    lin = linear_functional(phi, cutoff=8)
    pts = rng.uniform(size=5)
    assert laplacian_residual(lin, pts, i=0) < 1e-3


def test_laplacian_residual_square_closed_form(rng):
    # for Phi(m) = (m(phi))^2 the correction is exactly 2 phi'(x_i)^2
    sq = make_square_functional(cutoff=8)
    pts = rng.uniform(size=8)
    i = 3
    got = laplacian_residual(sq, pts, i=i)
    expected = 2.0 * (2 * np.pi * np.sin(2 * np.pi * pts[i])) ** 2
    assert abs(got - expected) < 0.05 * max(expected, 1.0)


def test_laplacian_residual_uniform_in_n(rng):
    sq = make_square_functional(cutoff=8)
    bound = 2.0 * (2 * np.pi) ** 2  # sup over x of 2 phi'(x)^2
    for n in [4, 16, 64, 256]:
        pts = rng.uniform(size=n)
        res = laplacian_residual(sq, pts, i=0)
        assert res <= 1.2 * bound


# --- semiconcavity ------------------------------------------------------------

def test_semiconcavity_linear_functional(rng):
    lin = linear_functional(cos_field(), cutoff=6)
    c = check_semiconcavity(lin, "d1", trials=20, rng=rng)
    assert c < 1e-9


def test_semiconcavity_square_bounded(rng):
    # Phi = (m(phi))^2 with Lip(phi) = 2 pi: analytic bound 2 (2 pi)^2
    sq = make_square_functional()
    c = check_semiconcavity(sq, "d1", trials=40, rng=rng)
    assert c <= 2.0 * (2 * np.pi) ** 2 * 1.05


def test_semiconcavity_concave_outer(rng):
    phi = cos_field()
    conc = cylindrical_functional(
        [phi], outer=lambda v: -v[0] ** 2,
        outer_grad=lambda v: np.array([-2 * v[0]]),
        cutoff=6,
    )
    c = check_semiconcavity(conc, "d1", trials=30, rng=rng)
    assert c < 1e-9


def test_semiconcavity_hs_metric(rng):
    sq = make_square_functional(sobolev=SobolevWeight(2.0))
    c = check_semiconcavity(sq, SobolevWeight(2.0), trials=30, rng=rng)
    assert np.isfinite(c)
    assert c <= sq.metadata.semiconcave_hs * 1.05


# --- distance cost ------------------------------------------------------------

def test_distance_cost_evaluates_and_is_lipschitz(rng):
    from mfclab.transport import w1_circle
    target = PointCloud(1, [[0.25]])
    dc = distance_cost_functional(target, cutoff=6)
    for _ in range(10):
        m1 = random_measure(1, 6, rng)
        m2 = random_measure(1, 6, rng)
        gap = abs(dc(m1) - dc(m2))
        assert gap <= w1_circle(m1, m2) + 1e-9
