"""Roll out learned dynamics forward or backward in time.

The learned rate fields come from Hessian-vector products of the trained
scalar network (never dense Hessians on the integration path). Reverse
rollouts are the plain time substitution s = t_end - t with the negated
rate: no extra regularization is applied, which is the point of the
dissipative-Lagrangian construction. Reverse integration of a dissipative
field amplifies errors, so integrator aborts are expected on long reverse
horizons and are reported with the partial trajectory, never silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from .network import NetworkParams, input_hvp, network_output
from .oracle import IntegrationAbort, Trajectory, rk45_integrate


@dataclass(frozen=True)
class RolloutConfig:
    t_span: Tuple[float, float]
    direction: str = "forward"
    tol: float = 1e-9
    output_times: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be forward|reverse, got "
                             f"{self.direction!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError(f"t_span must be nondegenerate with t0 < t1, "
                             f"got {self.t_span}")


def learned_rate_diffusion(net: NetworkParams) -> Callable:
    """c_dot = -H(c) c from one HVP with direction c."""
    hvp = jax.jit(lambda c: -input_hvp(net, c, c))

    def rate(t, c):
        return np.asarray(hvp(jnp.asarray(c)))

    return rate


def learned_rate_mechanics(net: NetworkParams, m_mat) -> Callable:
    """d/dt (x, x_dot) with x_ddot = -M^-1 (K_hat x + C_sym_hat x_dot).

    The generalized force K_hat x + C_sym_hat x_dot is assembled from two
    HVPs on the concatenated (x, x_dot) input, mirroring the training
    residual.
    """
    m_mat = np.asarray(m_mat, dtype=float)
    n = m_mat.shape[0]
    if net.n_in != 2 * n:
        raise ValueError(f"network takes {net.n_in} inputs, expected {2 * n}")
    m_inv = np.linalg.inv(m_mat)

    @jax.jit
    def force(u):
        h_u = input_hvp(net, u, u)
        h_v = input_hvp(net, u, jnp.concatenate([u[n:], jnp.zeros(n)]))
        return h_u[:n] + h_v[n:]

    def rate(t, y):
        xd = y[n:]
        xdd = -m_inv @ np.asarray(force(jnp.asarray(y)))
        return np.concatenate([xd, xdd])

    return rate


def baseline_rate(net: NetworkParams) -> Callable:
    """Direct network evaluation as the rate field."""
    out = jax.jit(lambda c: network_output(net, c))

    def rate(t, c):
        return np.asarray(out(jnp.asarray(c)))

    return rate


def rollout(rate_fn: Callable, ic, cfg: RolloutConfig) -> Trajectory:
    """Integrate the rate field over cfg.t_span from ic.

    forward: ic is the state at t_span[0]; times increase.
    reverse: ic is the state at t_span[1]; integration runs in s = t_end - t
    with rate -rate_fn, and the trajectory reports states at decreasing
    physical times.
    """
    ic = np.asarray(ic, dtype=float)
    t0, t1 = float(cfg.t_span[0]), float(cfg.t_span[1])

    if cfg.direction == "forward":
        return rk45_integrate(rate_fn, ic, (t0, t1), tol=cfg.tol,
                              t_eval=cfg.output_times)

    # reverse: s in [0, t1 - t0], y(s) = state at physical time t1 - s
    span = t1 - t0
    if cfg.output_times is not None:
        phys = np.asarray(cfg.output_times, dtype=float)
        if (np.diff(phys) >= 0).any():
            raise ValueError("reverse output_times must be strictly decreasing")
        s_eval = t1 - phys
    else:
        s_eval = None

    def neg_rate(s, y):
        return -np.asarray(rate_fn(t1 - s, y))

    try:
        traj = rk45_integrate(neg_rate, ic, (0.0, span), tol=cfg.tol,
                              t_eval=s_eval)
    except IntegrationAbort as exc:
        partial = exc.trajectory
        raise IntegrationAbort(
            str(exc), Trajectory(t1 - partial.times, partial.states)
        ) from None
    return Trajectory(t1 - traj.times, traj.states)


# ---------------------------------------------------------------------------
# trajectory files: `t, s_1..s_N` CSV
# ---------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    header = ",".join(["t"] + [f"s_{i + 1}" for i in range(n)])
    table = np.hstack([traj.times[:, None], traj.states])
    np.savetxt(path, table, delimiter=",", header=header, comments="",
               fmt="%.17g")


def load_trajectory(path) -> Trajectory:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(table[:, 0], table[:, 1:])
