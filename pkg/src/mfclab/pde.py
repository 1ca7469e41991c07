"""Torus PDE solvers and the coupled mean-field-control system.

All torus solvers march band-limited fields with an exponential integrator:
the heat part is applied exactly in Fourier space (multiplier
exp(-4 pi^2 |k|^2 dt), matching the sqrt(2) dW convention) and the
transport / Hamiltonian terms are explicit, Heun-corrected. The viscous
Hamilton-Jacobi solver for the R^d-window examples uses monotone
Lax-Friedrichs differences with an implicit (theta-scheme) diffusion step.

The mean-field-control solver iterates the optimality system: backward HJB
with source dF/dm along the current flow, feedback alpha = -D_p H(x, Du),
forward Fokker-Planck, damped relaxation of the flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CFLViolation,
    DimensionUnsupported,
    GridTooCoarse,
    NonConvergence,
)
from .functionals import MeasureFunctional
from .spectral import (
    GridField,
    SobolevWeight,
    SpectralMeasure,
    SpectralVector,
    empirical,
    eval_modes,
    expectation,
    grid_nodes,
    hs_norm,
    mode_values,
    to_density,
)

__all__ = [
    "HamiltonianSpec",
    "MFCProblem",
    "MFCSolution",
    "TimeField",
    "solve_linear_backward",
    "solve_fokker_planck",
    "solve_hjb_semilinear",
    "solve_mfc",
    "solve_viscous_hj",
    "solve_hjbn_small",
    "WindowSolution",
]


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian/Lagrangian pair under H(x,p) = sup_a {-L(x,a) - a.p}.

    ``quadratic_plus_drift``: H(x,p) = |p|^2/2 + b(x).p with the
    Legendre-consistent L(x,a) = |a + b(x)|^2/2 and D_p H = p + b(x).
    ``custom``: the three callbacks are supplied together and are trusted to
    be a Legendre pair; ``legendre_gap`` can probe the consistency.

    The drift is a callable points -> (N, d) array (or None for b = 0).
    """

    kind: str = "quadratic_plus_drift"
    drift: Optional[Callable] = None
    h: Optional[Callable] = None
    dp_h: Optional[Callable] = None
    lagrangian: Optional[Callable] = None

    def drift_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.drift is None:
            return np.zeros_like(pts)
        return np.asarray(self.drift(pts), dtype=float)

    def hamiltonian(self, points: np.ndarray, p: np.ndarray) -> np.ndarray:
        """H at positions ``points`` (N, d) and momenta ``p`` (N, d)."""
        if self.kind == "custom":
            return np.asarray(self.h(points, p), dtype=float)
        b = self.drift_at(points)
        return 0.5 * np.sum(p ** 2, axis=-1) + np.sum(b * p, axis=-1)

    def optimal_feedback(self, points: np.ndarray, p: np.ndarray) -> np.ndarray:
        """alpha = -D_p H(x, p)."""
        if self.kind == "custom":
            return -np.asarray(self.dp_h(points, p), dtype=float)
        return -(p + self.drift_at(points))

    def running_lagrangian(self, points: np.ndarray,
                           a: np.ndarray) -> np.ndarray:
        if self.kind == "custom":
            return np.asarray(self.lagrangian(points, a), dtype=float)
        b = self.drift_at(points)
        return 0.5 * np.sum((a + b) ** 2, axis=-1)

    def legendre_gap(self, points: np.ndarray, momenta: np.ndarray,
                     n_search: int = 201, radius: float = 8.0) -> float:
        """Max |H(x,p) - sup_a {-L(x,a) - a.p}| over the given samples.

        The inner sup runs over a dense grid of actions; adequate for the
        d = 1 sanity checks the invariant asks for.
        """
        pts = np.atleast_2d(points)
        d = pts.shape[1]
        if d != 1:
            raise DimensionUnsupported("legendre probe implemented for d = 1")
        actions = np.linspace(-radius, radius, n_search)[:, None]
        worst = 0.0
        for x, p in zip(pts, np.atleast_2d(momenta)):
            xs = np.repeat(x[None, :], n_search, axis=0)
            vals = -self.running_lagrangian(xs, actions) \
                - actions[:, 0] * p[0]
            worst = max(worst, abs(float(self.hamiltonian(
                x[None, :], p[None, :])[0]) - vals.max()))
        return worst


@dataclass(frozen=True)
class MFCProblem:
    """Data of the control problem: Hamiltonian, costs, horizon."""

    hamiltonian: HamiltonianSpec
    running_cost: Optional[MeasureFunctional]
    terminal_cost: MeasureFunctional
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


# ---------------------------------------------------------------------------
# time-indexed fields
# ---------------------------------------------------------------------------

@dataclass
class TimeField:
    """Uniform-in-time stack of grid frames with linear interpolation."""

    times: np.ndarray
    frames: np.ndarray  # (nt+1, ...) array

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.frames[0]
        if t >= ts[-1]:
            return self.frames[-1]
        j = int(np.searchsorted(ts, t) - 1)
        lam = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - lam) * self.frames[j] + lam * self.frames[j + 1]


def _coerce_timefield(obj, times, shape) -> TimeField:
    """Accept None, a constant array, a callable t -> array, or TimeField."""
    if isinstance(obj, TimeField):
        return obj
    nt1 = len(times)
    if obj is None:
        return TimeField(times, np.zeros((nt1,) + shape))
    if callable(obj):
        frames = np.stack([np.asarray(obj(t), dtype=float) for t in times])
        return TimeField(times, frames)
    arr = np.asarray(obj, dtype=float)
    if arr.shape == shape:
        return TimeField(times, np.broadcast_to(arr, (nt1,) + shape).copy())
    raise ValueError(f"cannot coerce shape {arr.shape} to frames of {shape}")


# ---------------------------------------------------------------------------
# spectral helpers on the solver grid
# ---------------------------------------------------------------------------

def _fft_ksq(dim: int, n: int) -> np.ndarray:
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for _ in range(dim)]
    mesh = np.meshgrid(*freqs, indexing="ij")
    return sum(m ** 2 for m in mesh)


def _fft_k(dim: int, n: int, axis: int) -> np.ndarray:
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    shape = [1] * dim
    shape[axis] = n
    return freqs.reshape(shape)


def _grad(values: np.ndarray) -> np.ndarray:
    d = values.ndim
    n = values.shape[0]
    vhat = np.fft.ifftn(values)
    out = np.empty((d,) + values.shape)
    for ax in range(d):
        out[ax] = np.fft.fftn(vhat * (-2j * np.pi * _fft_k(d, n, ax))).real
    return out


def _div(vec: np.ndarray) -> np.ndarray:
    d, n = vec.shape[0], vec.shape[1]
    out = np.zeros(vec.shape[1:])
    for ax in range(d):
        vhat = np.fft.ifftn(vec[ax])
        out += np.fft.fftn(vhat * (-2j * np.pi * _fft_k(d, n, ax))).real
    return out


def _advection_cfl(dt: float, dx: float, speed: float, label: str) -> None:
    if speed <= 0:
        return
    stable = 0.9 * dx / speed
    if dt > stable:
        raise CFLViolation(
            f"{label}: dt = {dt:.3e} exceeds stable dt = {stable:.3e} "
            f"(dx = {dx:.3e}, max speed = {speed:.3e})", stable_dt=stable)


# ---------------------------------------------------------------------------
# linear backward equation
# ---------------------------------------------------------------------------

def solve_linear_backward(alpha, g: GridField, f=None, t0: float = 0.0,
                          t1: float = 1.0, nt: int = 200,
                          check_cfl: bool = True) -> TimeField:
    """-d_t v - Lap v - alpha . Dv = f with v(t1) = g, on the torus.

    Exponential (exact-heat) stepping with a Heun-corrected explicit
    transport term. ``alpha`` is a TimeField of shape (d, n, ..., n) frames,
    a constant array of the same shape, a callable t -> array, or None.
    Returns v on the uniform time grid from t0 to t1.
    """
    n = g.resolution
    d = g.dim
    times = np.linspace(t0, t1, nt + 1)
    dt = (t1 - t0) / nt
    alpha_tf = _coerce_timefield(alpha, times, (d,) + g.values.shape)
    f_tf = _coerce_timefield(f, times, g.values.shape)
    if check_cfl:
        speed = max(float(np.abs(alpha_tf.frames).max()), 0.0)
        _advection_cfl(dt, 1.0 / n, speed, "solve_linear_backward")
    heat = np.exp(-4.0 * np.pi ** 2 * _fft_ksq(d, n) * dt)

    def rhs(values: np.ndarray, t: float) -> np.ndarray:
        grad = _grad(values)
        a = alpha_tf.at(t)
        return np.sum(a * grad, axis=0) + f_tf.at(t)

    frames = np.empty((nt + 1,) + g.values.shape)
    frames[nt] = g.values
    v = g.values.copy()
    for j in range(nt - 1, -1, -1):
        t_hi, t_lo = times[j + 1], times[j]
        k1 = rhs(v, t_hi)
        half = np.fft.fftn(np.fft.ifftn(v + dt * k1) * heat).real
        k2 = rhs(half, t_lo)
        v = np.fft.fftn(np.fft.ifftn(v + 0.5 * dt * k1) * heat).real \
            + 0.5 * dt * k2
        frames[j] = v
    return TimeField(times, frames)


# ---------------------------------------------------------------------------
# Fokker-Planck
# ---------------------------------------------------------------------------

def solve_fokker_planck(alpha, m0: SpectralMeasure, t0: float, t1: float,
                        nt: int = 200, pad: int = 2,
                        resolution: int | None = None,
                        check_cfl: bool = True) -> list[SpectralMeasure]:
    """d_t m = Lap m - div(m alpha), mass-conserving, in coefficient space.

    The drift product is formed on a padded grid (dealiasing; the extracted
    band stays alias-free as long as resolution >= 3K+1 plus the drift's
    bandwidth margin) and the divergence truncated back to the working
    cutoff. The k = 0 mode is untouched by construction, so total mass
    stays exactly 1.
    """
    K = m0.cutoff
    d = m0.dim
    n = resolution if resolution is not None else pad * (2 * K + 1) + 1
    times = np.linspace(t0, t1, nt + 1)
    dt = (t1 - t0) / nt
    alpha_tf = _coerce_timefield(alpha, times, (d,) + (n,) * d)
    if check_cfl:
        speed = max(float(np.abs(alpha_tf.frames).max()), 0.0)
        _advection_cfl(dt, 1.0 / n, speed, "solve_fokker_planck")
    k = mode_values(K)
    mesh = np.meshgrid(*([k] * d), indexing="ij")
    ksq = sum(m.astype(float) ** 2 for m in mesh)
    heat = np.exp(-4.0 * np.pi ** 2 * ksq * dt)
    idx = np.ix_(*[k % n] * d)

    def rhs(coeffs: np.ndarray, t: float) -> np.ndarray:
        full = np.zeros((n,) * d, dtype=complex)
        full[idx] = coeffs
        dens = np.fft.fftn(full).real
        a = alpha_tf.at(t)
        flux = dens[None, ...] * a
        out = np.zeros_like(coeffs)
        for ax in range(d):
            fhat = np.fft.ifftn(flux[ax])
            out += fhat[idx] * (-2j * np.pi * mesh[ax])
        return -out

    flow = [m0]
    c = np.array(m0.coeffs)
    for j in range(nt):
        k1 = rhs(c, times[j])
        pred = (c + dt * k1) * heat
        k2 = rhs(pred, times[j + 1])
        c = (c + 0.5 * dt * k1) * heat + 0.5 * dt * k2
        flow.append(SpectralMeasure(d, K, c))
        c = np.array(flow[-1].coeffs)
    return flow


# ---------------------------------------------------------------------------
# semilinear HJB
# ---------------------------------------------------------------------------

def solve_hjb_semilinear(f, g: GridField, hamiltonian: HamiltonianSpec,
                         t0: float, t1: float, nt: int = 200,
                         check_cfl: bool = True) -> TimeField:
    """-d_t u - Lap u + H(x, Du) = f with u(t1) = g, on the torus."""
    n = g.resolution
    d = g.dim
    times = np.linspace(t0, t1, nt + 1)
    dt = (t1 - t0) / nt
    f_tf = _coerce_timefield(f, times, g.values.shape)
    heat = np.exp(-4.0 * np.pi ** 2 * _fft_ksq(d, n) * dt)
    pts = grid_nodes(d, n)

    def rhs(values: np.ndarray, t: float) -> np.ndarray:
        grad = _grad(values)
        p = grad.reshape(d, -1).T
        hvals = hamiltonian.hamiltonian(pts, p).reshape(values.shape)
        return -hvals + f_tf.at(t)

    if check_cfl:
        grad0 = _grad(g.values)
        p0 = grad0.reshape(d, -1).T
        speed = float(np.abs(
            -hamiltonian.optimal_feedback(pts, p0)).max())
        _advection_cfl(dt, 1.0 / n, max(speed, 1e-12),
                       "solve_hjb_semilinear")

    frames = np.empty((nt + 1,) + g.values.shape)
    frames[nt] = g.values
    v = g.values.copy()
    for j in range(nt - 1, -1, -1):
        k1 = rhs(v, times[j + 1])
        half = np.fft.fftn(np.fft.ifftn(v + dt * k1) * heat).real
        k2 = rhs(half, times[j])
        v = np.fft.fftn(np.fft.ifftn(v + 0.5 * dt * k1) * heat).real \
            + 0.5 * dt * k2
        frames[j] = v
    return TimeField(times, frames)


# ---------------------------------------------------------------------------
# coupled MFC system
# ---------------------------------------------------------------------------

@dataclass
class MFCSolution:
    """Optimality-system output: adjoint field, flow, feedback, value."""

    times: np.ndarray
    u: TimeField
    alpha: TimeField
    flow: list
    value: float
    picard_residual: float
    certified: bool
    cutoff: int
    resolution: int

    def measure_at(self, t: float) -> SpectralMeasure:
        j = int(np.argmin(np.abs(self.times - t)))
        return self.flow[j]

    def feedback_at(self, t: float, points: np.ndarray) -> np.ndarray:
        """Evaluate the feedback drift at arbitrary torus points.

        The frames live on an odd grid, so the full mode set is symmetric
        and the trigonometric evaluation is exact for the stored field.
        """
        frame = self.alpha.at(t)  # (d, n, ..., n)
        d = frame.shape[0]
        n = frame.shape[1]
        K = (n - 1) // 2
        out = np.empty((np.atleast_2d(points).shape[0], d))
        idx = np.ix_(*[mode_values(K) % n] * d)
        for ax in range(d):
            coeffs = np.fft.ifftn(frame[ax])[idx]
            out[:, ax] = eval_modes(coeffs, K, points)
        return out


def _flow_distance(flow_a, flow_b, weight: SobolevWeight) -> float:
    return max(hs_norm(a - b, weight) for a, b in zip(flow_a, flow_b))


def solve_mfc(problem: MFCProblem, t0: float, m0: SpectralMeasure,
              resolution: int | None = None, nt: int = 160,
              damping: float = 0.3, max_iter: int = 400, tol: float = 1e-7,
              weight: SobolevWeight | None = None,
              init_flow: list | None = None) -> MFCSolution:
    """Damped Picard iteration on the MFC optimality system.

    Given the current flow, solve the backward HJB with source dF/dm along
    the flow and terminal dG/dm at the final measure, set
    alpha = -D_p H(x, Du), propagate Fokker-Planck, and relax. Non-convex
    instances may stall at a residual plateau; the best iterate is then
    returned with ``certified=False`` instead of raising.
    """
    K = m0.cutoff
    d = m0.dim
    F, G = problem.running_cost, problem.terminal_cost
    T = problem.horizon
    if G.flat_derivative is None or (F is not None and F.flat_derivative is None):
        raise NonConvergence("solve_mfc needs flat derivatives of the costs")
    if resolution is None:
        resolution = 4 * K + 1  # odd: symmetric full mode set
    if resolution % 2 == 0:
        resolution += 1
    n = resolution
    times = np.linspace(t0, T, nt + 1)
    if weight is None:
        weight = SobolevWeight(2.0)
    pts = grid_nodes(d, n)

    flow = init_flow
    if flow is None:
        flow = solve_fokker_planck(None, m0, t0, T, nt=nt,
                                   resolution=n, check_cfl=False)
    hs_resid = np.inf
    best = None

    def deriv_field(phi: MeasureFunctional, m: SpectralMeasure) -> np.ndarray:
        gf = phi.derivative(m)
        if gf.resolution != n:
            from .spectral import regrid
            gf = regrid(gf, n)
        return gf.values

    for it in range(max_iter):
        # backward HJB along the current flow
        f_frames = np.zeros((nt + 1,) + (n,) * d)
        if F is not None:
            for j in range(nt + 1):
                f_frames[j] = deriv_field(F, flow[j])
        g_term = GridField(d, deriv_field(G, flow[nt]))
        u_tf = solve_hjb_semilinear(TimeField(times, f_frames), g_term,
                                    problem.hamiltonian, t0, T, nt=nt,
                                    check_cfl=False)
        # feedback frames
        a_frames = np.empty((nt + 1, d) + (n,) * d)
        for j in range(nt + 1):
            grad = _grad(u_tf.frames[j])
            p = grad.reshape(d, -1).T
            a = problem.hamiltonian.optimal_feedback(pts, p)
            a_frames[j] = a.T.reshape((d,) + (n,) * d)
        alpha_tf = TimeField(times, a_frames)
        new_flow = solve_fokker_planck(alpha_tf, m0, t0, T, nt=nt,
                                       resolution=n, check_cfl=False)
        hs_resid = _flow_distance(new_flow, flow, weight)
        relaxed = [
            SpectralMeasure(d, K, (1 - damping) * a.coeffs
                            + damping * b.coeffs)
            for a, b in zip(flow, new_flow)
        ]
        flow = relaxed
        if best is None or hs_resid < best[0]:
            best = (hs_resid, flow, u_tf, alpha_tf)
        if hs_resid < tol:
            break

    hs_resid, flow, u_tf, alpha_tf = best
    value = _mfc_value(problem, times, flow, alpha_tf, pts, n, d)
    return MFCSolution(times, u_tf, alpha_tf, flow, value, hs_resid,
                       hs_resid < tol, K, n)


def _mfc_value(problem, times, flow, alpha_tf, pts, n, d) -> float:
    """Quadrature of the running cost along the flow plus terminal cost."""
    F = problem.running_cost
    running = np.empty(len(times))
    for j, t in enumerate(times):
        a = alpha_tf.frames[j].reshape(d, -1).T
        lag = problem.hamiltonian.running_lagrangian(pts, a)
        lfield = GridField(d, lag.reshape((n,) * d))
        running[j] = expectation(flow[j], lfield)
        if F is not None:
            running[j] += F(flow[j])
    value = float(np.trapezoid(running, times))
    value += problem.terminal_cost(flow[-1])
    return value


# ---------------------------------------------------------------------------
# viscous Hamilton-Jacobi on a window (Example-2 geometry)
# ---------------------------------------------------------------------------

@dataclass
class WindowSolution:
    x: np.ndarray
    times: np.ndarray
    frames: np.ndarray  # (nt+1, n)

    def terminal_error_region(self, half_width: float) -> np.ndarray:
        return np.abs(self.x) <= half_width

    def at_time(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.times - t)))
        return self.frames[j]


def solve_viscous_hj(hamiltonian: Callable[[np.ndarray], np.ndarray],
                     terminal: Callable[[np.ndarray], np.ndarray],
                     source: Callable[[np.ndarray], np.ndarray] | None,
                     nu: float, horizon: float, half_width: float = 3.0,
                     n: int = 4001, nt: int | None = None,
                     theta: float | None = None,
                     store_frames: bool = False) -> WindowSolution:
    """-d_t v - nu Lap v + H(Dv) = F, v(T) = G on [-A, A], Neumann closure.

    Monotone Lax-Friedrichs numerical Hamiltonian with dissipation
    ``theta`` >= max |H'| over the run; the diffusion is folded in by an
    implicit tridiagonal step each iteration, so the time step is limited
    only by the advective CFL. ``nu = 0`` runs the pure first-order scheme
    and serves as the inviscid reference.
    """
    x = np.linspace(-half_width, half_width, n)
    dx = x[1] - x[0]
    g = np.asarray(terminal(x), dtype=float)
    fsrc = np.zeros(n) if source is None else np.asarray(source(x), dtype=float)
    if theta is None:
        p0 = np.gradient(g, dx)
        theta = float(np.abs(p0).max()) * 1.5 + 1.0
    dt_stable = 0.45 * dx / max(theta, 1e-12)
    if nt is None:
        nt = int(np.ceil(horizon / dt_stable))
    dt = horizon / nt
    if dt > dx / theta:
        raise CFLViolation(
            f"solve_viscous_hj: dt = {dt:.3e} above advective limit "
            f"{dx / theta:.3e}", stable_dt=dx / theta)

    # implicit diffusion operator (Neumann): tridiagonal I - dt nu D2
    if nu > 0:
        from scipy.linalg import solve_banded
        lam = nu * dt / dx ** 2
        ab = np.zeros((3, n))
        ab[0, 1:] = -lam
        ab[1, :] = 1 + 2 * lam
        ab[1, 0] = ab[1, -1] = 1 + lam  # Neumann: reflected neighbor
        ab[2, :-1] = -lam

    v = g.copy()
    frames = [v.copy()] if store_frames else None
    for _ in range(nt):
        dminus = np.empty(n)
        dplus = np.empty(n)
        dminus[1:] = (v[1:] - v[:-1]) / dx
        dplus[:-1] = dminus[1:]
        dminus[0] = 0.0   # Neumann ghosts
        dplus[-1] = 0.0
        ham = hamiltonian(0.5 * (dminus + dplus)) \
            - 0.5 * theta * (dplus - dminus)
        v = v + dt * (fsrc - ham)
        if nu > 0:
            v = solve_banded((1, 1), ab, v)
        if store_frames:
            frames.append(v.copy())
    times = np.linspace(horizon, 0.0, nt + 1) if store_frames else \
        np.array([horizon, 0.0])
    stack = np.stack(frames) if store_frames else np.stack([g, v])
    return WindowSolution(x, times, stack)


# ---------------------------------------------------------------------------
# N-particle HJB at tiny N (d = 1)
# ---------------------------------------------------------------------------

@dataclass
class TensorGridSolution:
    n: int
    n_particles: int
    times: np.ndarray
    terminal_frame: np.ndarray
    frame_t0: np.ndarray

    def value_at(self, points: Sequence[float]) -> float:
        """Multilinear interpolation of V^N(t0, .) at an N-tuple."""
        pts = np.mod(np.asarray(points, dtype=float), 1.0)
        idx = pts * self.n
        lo = np.floor(idx).astype(int) % self.n
        frac = idx - np.floor(idx)
        val = 0.0
        for corner in range(2 ** self.n_particles):
            weight = 1.0
            index = []
            for ax in range(self.n_particles):
                if (corner >> ax) & 1:
                    index.append((lo[ax] + 1) % self.n)
                    weight *= frac[ax]
                else:
                    index.append(lo[ax])
                    weight *= 1 - frac[ax]
            val += weight * self.frame_t0[tuple(index)]
        return float(val)


def solve_hjbn_small(problem: MFCProblem, n_particles: int, t0: float = 0.0,
                     n: int = 48, nt: int | None = None) -> TensorGridSolution:
    """Monotone solve of the N-particle HJB on (T^1)^N for N <= 3.

    -d_t V - sum_i Lap_i V + (1/N) sum_i H(x_i, N D_i V) = F(m_x),
    V(T, x) = G(m_x). Writing G_i(p) = H(x_i, N p)/N, the Lax-Friedrichs
    dissipation bound is max |D_p H|, independent of N.
    """
    N = n_particles
    if N > 3:
        raise DimensionUnsupported("exact HJB(N) limited to N <= 3")
    if n < 8:
        raise GridTooCoarse("need at least 8 points per axis")
    T = problem.horizon
    dx = 1.0 / n
    axis = np.arange(n) / n
    mesh = np.meshgrid(*([axis] * N), indexing="ij")
    flat_pts = np.stack([m.ravel() for m in mesh], axis=-1)  # (n^N, N)

    K = problem.terminal_cost.cutoff
    cost_cache = {}

    def cost_on_grid(phi: MeasureFunctional) -> np.ndarray:
        key = id(phi)
        if key not in cost_cache:
            vals = np.empty(len(flat_pts))
            for j, xs in enumerate(flat_pts):
                vals[j] = phi(empirical(xs[:, None], K))
            cost_cache[key] = vals.reshape((n,) * N)
        return cost_cache[key]

    g_vals = cost_on_grid(problem.terminal_cost)
    f_vals = cost_on_grid(problem.running_cost) \
        if problem.running_cost is not None else np.zeros((n,) * N)

    # dissipation: theta >= max |D_p H| over the run; probe from terminal data
    grads = np.gradient(g_vals, dx)
    if N == 1:
        grads = [grads]
    pmax = max(float(np.abs(g).max()) for g in grads) * N
    theta = 0.0
    probe = np.linspace(-pmax - 1, pmax + 1, 65)[:, None]
    xprobe = np.linspace(0, 1, 17)[:, None]
    for xv in xprobe:
        fb = problem.hamiltonian.optimal_feedback(
            np.repeat(xv[None, :], len(probe), axis=0), probe)
        theta = max(theta, float(np.abs(fb).max()))
    theta = theta * 1.2 + 0.5

    dt_adv = 0.4 * dx / theta
    dt_diff = 0.2 * dx ** 2 / N
    dt_stable = min(dt_adv, dt_diff)
    if nt is None:
        nt = int(np.ceil((T - t0) / dt_stable))
    dt = (T - t0) / nt
    if dt > min(dx / theta, 0.5 * dx ** 2 / N):
        raise CFLViolation("solve_hjbn_small: unstable dt",
                           stable_dt=dt_stable)

    xi_flat = [mesh[i].ravel()[:, None] for i in range(N)]
    v = g_vals.copy()
    for _ in range(nt):
        rhs = f_vals.copy()
        for i in range(N):
            vp = np.roll(v, -1, axis=i)
            vm = np.roll(v, 1, axis=i)
            dplus = (vp - v) / dx
            dminus = (v - vm) / dx
            rhs += (vp - 2 * v + vm) / dx ** 2
            p_c = 0.5 * (dplus + dminus) * N
            hvals = problem.hamiltonian.hamiltonian(
                xi_flat[i], p_c.reshape(-1, 1)).reshape(v.shape) / N
            rhs -= hvals - 0.5 * theta * (dplus - dminus)
        v = v + dt * rhs
    return TensorGridSolution(n, N, np.array([t0, T]), g_vals, v)
