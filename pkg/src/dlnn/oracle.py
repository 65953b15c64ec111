"""Ground-truth physics: integrators, exact linear solutions, stiffness assembly.

Everything the learned models are measured against lives here, so the
implementations are deliberately independent of the network code: the
adaptive Runge-Kutta integrator is the classic 7-stage Dormand-Prince (4,5)
pair with FSAL, and linear systems additionally get a matrix-exponential
exact solution for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve

# Dormand-Prince 5(4): stage nodes, stage coefficients, 5th-order propagating
# weights (B5, FSAL: equal to the last stage row) and embedded 4th-order
# weights for the error estimate.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array(row)
    for row in (
        [],
        [1 / 5],
        [3 / 40, 9 / 40],
        [44 / 45, -56 / 15, 32 / 9],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
        [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    )
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_E = _DP_B5 - _DP_B4


@dataclass
class Trajectory:
    """Ordered (t, state) sequence from an oracle or a learned rollout.

    Times are strictly monotone: increasing for forward evolutions and
    decreasing for reverse rollouts.
    """

    times: np.ndarray
    states: np.ndarray
    rates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.rates is not None:
            self.rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"{self.states.shape[0]} states for {self.times.shape[0]} times"
            )
        if self.rates is not None and self.rates.shape != self.states.shape:
            raise ValueError("rates shape must match states shape")
        if self.times.size > 1:
            d = np.diff(self.times)
            if not ((d > 0).all() or (d < 0).all()):
                raise ValueError("times must be strictly monotone")

    def __len__(self) -> int:
        return self.times.shape[0]


class IntegrationAbort(RuntimeError):
    """Integration could not continue (step underflow / non-finite state).

    Carries the accepted part of the trajectory in .trajectory.
    """

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def rk45_integrate(
    rate_fn: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_span: Tuple[float, float],
    tol: float = 1e-9,
    t_eval: Optional[Sequence[float]] = None,
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Adaptive Dormand-Prince integration of y' = rate_fn(t, y).

    The step controller keeps the scaled local error below 1 per step with
    atol = rtol = tol. When t_eval is given, steps are clipped so the solver
    lands exactly on each requested time (no interpolation error in the
    output); otherwise every accepted step is recorded. On step-size
    underflow or a non-finite state the solver raises IntegrationAbort with
    the trajectory accepted so far.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError(f"t_span must satisfy t0 < t1, got {t_span}")
    y = np.asarray(y0, dtype=float).copy()
    if y.ndim != 1:
        raise ValueError("y0 must be a flat vector")

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.size == 0:
            raise ValueError("t_eval must be nonempty")
        if (np.diff(t_eval) <= 0).any():
            raise ValueError("t_eval must be strictly increasing")
        if t_eval[0] < t0 - 1e-12 or t_eval[-1] > t1 + 1e-12:
            raise ValueError("t_eval must lie within t_span")

    out_t, out_y = [], []

    def record(t, state):
        out_t.append(t)
        out_y.append(state.copy())

    next_out = 0
    t = t0
    if t_eval is None:
        record(t, y)
    elif abs(t_eval[0] - t0) <= 1e-14 * max(1.0, abs(t0)):
        record(t_eval[0], y)
        next_out = 1

    def partial() -> Trajectory:
        if not out_t:
            record(t, y)
        return Trajectory(np.array(out_t), np.array(out_y))

    f = np.asarray(rate_fn(t, y), dtype=float)
    if f.shape != y.shape:
        raise ValueError(f"rate_fn returned shape {f.shape}, expected {y.shape}")

    # initial step from the rate magnitude, clipped to the span
    scale_0 = tol + tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale_0) ** 2))
    d1 = np.sqrt(np.mean((f / scale_0) ** 2))
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * (t1 - t0)
    h = min(max(h, 1e-12 * (t1 - t0)), t1 - t0)

    k = np.empty((7, y.size))
    n_steps = 0
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if n_steps >= max_steps:
            raise IntegrationAbort(
                f"exceeded {max_steps} steps at t={t:.6g}", partial()
            )
        h = min(h, t1 - t)
        target = None
        if t_eval is not None and next_out < t_eval.size:
            target = t_eval[next_out]
            h = min(h, target - t)
        if h < 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationAbort(
                f"step size underflow (h={h:.3e}) at t={t:.6g}", partial()
            )

        # overflow in a trial step is handled via the error norm, not raised
        with np.errstate(over="ignore", invalid="ignore"):
            k[0] = f
            for i in range(1, 7):
                yi = y + h * (_DP_A[i] @ k[:i])
                k[i] = rate_fn(t + _DP_C[i] * h, yi)
            y_new = y + h * (_DP_B5 @ k)
            err_vec = h * (_DP_E @ k)

            if not np.isfinite(y_new).all():
                err_norm = np.inf
            else:
                scale = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
                err_norm = np.sqrt(np.mean((err_vec / scale) ** 2))

        n_steps += 1
        if err_norm <= 1.0:
            t_new = t + h
            y = y_new
            f = k[6].copy()  # FSAL: last stage is the rate at (t_new, y_new)
            t = t_new
            if t_eval is None:
                record(t, y)
            elif target is not None and abs(t - target) <= 1e-12 * max(1.0, abs(target)):
                record(target, y)
                next_out += 1
            factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
            h = h * min(5.0, max(0.2, factor))
        else:
            if np.isfinite(err_norm):
                h = h * max(0.2, 0.9 * err_norm ** -0.2)
            else:
                h = h * 0.2

    if t_eval is not None and next_out < t_eval.size:
        # only reachable if the final requested time coincides with t1 but
        # rounding left it unrecorded
        record(t_eval[next_out], y)

    return Trajectory(np.array(out_t), np.array(out_y))


def linear_system_exact(a: np.ndarray, y0, times: Sequence[float]) -> Trajectory:
    """y(t) = exp(A t) y0 via scaling-and-squaring, with rates A y(t)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"A must be square, got shape {a.shape}")
    y0 = np.asarray(y0, dtype=float)
    times = np.asarray(times, dtype=float)
    if not np.isfinite(times).all():
        raise ValueError("times must be finite")
    states = np.stack([expm(a * t) @ y0 for t in times])
    return Trajectory(times, states, rates=states @ a.T)


# ---------------------------------------------------------------------------
# mechanics
# ---------------------------------------------------------------------------

def mass_spring_damper_rate(sys) -> Callable[[float, np.ndarray], np.ndarray]:
    """d/dt (x, x_dot) = (x_dot, -M^-1 (C_sym x_dot + K x)).

    Only the symmetric part of C enters the equations of motion.
    """
    n = sys.n
    m_lu = lu_factor(sys.m)
    c_sym = sys.c_sym
    k_mat = sys.k

    def rate(t, y):
        x, xd = y[:n], y[n:]
        return np.concatenate([xd, -lu_solve(m_lu, c_sym @ xd + k_mat @ x)])

    return rate


def mechanics_state_matrix(sys) -> np.ndarray:
    """First-order form of the damped system: d/dt (x, x_dot) = A (x, x_dot)."""
    n = sys.n
    m_inv = np.linalg.inv(sys.m)
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -m_inv @ sys.k
    a[n:, n:] = -m_inv @ sys.c_sym
    return a


# ---------------------------------------------------------------------------
# diffusion
# ---------------------------------------------------------------------------

_ZERO_FLUX = "zero_flux"


@dataclass(frozen=True)
class DiffusionGrid:
    """Cell-centered square grid with a per-cell diffusivity field (um^2/s).

    diffusivity has shape (ny, nx), row 0 being the top row. Cells are
    flattened row-major, so cell (iy, ix) is state index iy * nx + ix.
    """

    nx: int
    ny: int
    cell_size: float
    diffusivity: np.ndarray
    boundary: Tuple[str, str, str, str] = (_ZERO_FLUX,) * 4  # top,bottom,left,right

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid dimensions must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        d = np.asarray(self.diffusivity, dtype=float)
        object.__setattr__(self, "diffusivity", d)
        if d.shape != (self.ny, self.nx):
            raise ValueError(
                f"diffusivity has shape {d.shape}, expected ({self.ny}, {self.nx})"
            )
        if not (d > 0).all():
            raise ValueError("diffusivity must be strictly positive everywhere")
        for tag in self.boundary:
            if tag != _ZERO_FLUX:
                raise ValueError(f"unsupported boundary condition {tag!r}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny


def assemble_diffusion_stiffness(grid: DiffusionGrid) -> np.ndarray:
    """Five-point finite-volume stiffness K with c_dot + K c = 0.

    Interface diffusivity is the harmonic mean of the two adjacent cells
    (continuous flux across material interfaces); zero-flux boundaries add
    nothing, so rows sum to zero and total mass is conserved. K is symmetric
    positive semidefinite.
    """
    nx, ny, h = grid.nx, grid.ny, grid.cell_size
    d = grid.diffusivity
    n = grid.n_cells
    k = np.zeros((n, n))

    def idx(iy, ix):
        return iy * nx + ix

    for iy in range(ny):
        for ix in range(nx):
            i = idx(iy, ix)
            for jy, jx in ((iy, ix + 1), (iy + 1, ix)):
                if jx >= nx or jy >= ny:
                    continue
                j = idx(jy, jx)
                d_face = 2.0 * d[iy, ix] * d[jy, jx] / (d[iy, ix] + d[jy, jx])
                w = d_face / (h * h)
                k[i, i] += w
                k[j, j] += w
                k[i, j] -= w
                k[j, i] -= w
    return k


def mirror_rate(k: np.ndarray) -> Callable[[float, np.ndarray], np.ndarray]:
    """Anti-dissipative mirror flow eta_dot = +K eta."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"K must be square, got shape {k.shape}")
    return lambda t, eta: k @ eta


def lehmer_matrix(n: int) -> np.ndarray:
    """L_ij = min(i, j) / max(i, j) (1-based); symmetric positive definite."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(1, n + 1)
    return np.minimum.outer(i, i) / np.maximum.outer(i, i)
