"""Lagrangian-side formulas for dissipative mechanics and diffusion.

Two scalar functionals drive everything:

* the dissipative Lagrangian D(x, x_dot) = 1/2 x_dot^T M x_dot
  + 1/2 x_dot^T C x + 1/2 x^T K x, whose input-Hessian blocks are the
  governing matrices, and
* the mirror-coordinate Lagrangian L(x, x_dot, eta, eta_dot) that couples the
  observables to a mirror system with negative damping so the doubled system
  is conservative.

The mirror variables eta are never trained or observed; they appear only in
the identity checks relating L to derivatives of D. Training losses use the
residual forms below, evaluated through input-HVPs of a learned network so
the dense Hessian is never materialized on the hot path.

Diffusion uses the same machinery with state c and D = 1/2 c^T K c (the
rate term of the continuous-time functional is linear in c and drops out of
the Hessian).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from .network import NetworkParams, input_hessian, input_hvp, quadratic_net


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MechanicsSystem:
    """Mass, damping and stiffness matrices of a linear dissipative system."""

    m: np.ndarray
    c: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.m, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", k)
        n = m.shape[0]
        for name, a in (("M", m), ("C", c), ("K", k)):
            if a.shape != (n, n):
                raise ValueError(f"{name} has shape {a.shape}, expected ({n}, {n})")
        if abs(np.linalg.det(m)) < 1e-300:
            raise ValueError("M must be invertible")

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def c_sym(self) -> np.ndarray:
        """Symmetric part of C, the only part entering the equations of motion."""
        return 0.5 * (self.c + self.c.T)


@dataclass
class MechanicsState:
    x: np.ndarray
    x_dot: np.ndarray
    x_ddot: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.x_dot = np.atleast_1d(np.asarray(self.x_dot, dtype=float))
        if self.x_ddot is not None:
            self.x_ddot = np.atleast_1d(np.asarray(self.x_ddot, dtype=float))
        n = self.x.shape[0]
        for name, v in (("x_dot", self.x_dot), ("x_ddot", self.x_ddot)):
            if v is not None and v.shape != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")


@dataclass
class MirrorState:
    eta: np.ndarray
    eta_dot: np.ndarray

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        self.eta_dot = np.atleast_1d(np.asarray(self.eta_dot, dtype=float))
        if self.eta_dot.shape != self.eta.shape:
            raise ValueError("eta and eta_dot must have the same length")
        if not (np.isfinite(self.eta).all() and np.isfinite(self.eta_dot).all()):
            raise ValueError("mirror state must be finite")


@dataclass
class DiffusionState:
    c: np.ndarray
    c_dot: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.c_dot is not None:
            self.c_dot = np.atleast_1d(np.asarray(self.c_dot, dtype=float))
            if self.c_dot.shape != self.c.shape:
                raise ValueError("c and c_dot must have the same length")


# ---------------------------------------------------------------------------
# reference scalar functionals
# ---------------------------------------------------------------------------

def dissipative_lagrangian_quadratic(sys: MechanicsSystem, s: MechanicsState) -> float:
    """D = 1/2 x_dot^T M x_dot + 1/2 x_dot^T C x + 1/2 x^T K x."""
    _check_state_dim(sys, s)
    xd, x = s.x_dot, s.x
    return float(0.5 * (xd @ sys.m @ xd + xd @ sys.c @ x + x @ sys.k @ x))


def morse_feshbach_lagrangian(
    sys: MechanicsSystem, s: MechanicsState, m: MirrorState
) -> float:
    """L = eta_dot^T M x_dot - 1/2 (x_dot^T C eta - eta_dot^T C x) - eta^T K x."""
    _check_state_dim(sys, s)
    if m.eta.shape != s.x.shape:
        raise ValueError("mirror state dimension does not match x")
    xd, x, ed, e = s.x_dot, s.x, m.eta_dot, m.eta
    return float(ed @ sys.m @ xd - 0.5 * (xd @ sys.c @ e - ed @ sys.c @ x) - e @ sys.k @ x)


def momenta(
    sys: MechanicsSystem, s: MechanicsState, m: MirrorState
) -> Tuple[np.ndarray, np.ndarray]:
    """Conjugate momenta (p_x, p_eta) = (dL/dx_dot, dL/deta_dot).

    p_x depends only on mirror variables, p_eta only on observables:
    p_x = M^T eta_dot - 1/2 C eta,  p_eta = M x_dot + 1/2 C x.
    """
    _check_state_dim(sys, s)
    if m.eta.shape != s.x.shape:
        raise ValueError("mirror state dimension does not match x")
    p_x = sys.m.T @ m.eta_dot - 0.5 * sys.c @ m.eta
    p_eta = sys.m @ s.x_dot + 0.5 * sys.c @ s.x
    return p_x, p_eta


def _check_state_dim(sys: MechanicsSystem, s: MechanicsState):
    if s.x.shape != (sys.n,):
        raise ValueError(
            f"state dimension {s.x.shape[0]} does not match system dimension {sys.n}"
        )


# ---------------------------------------------------------------------------
# network residuals (training losses are means of their squares)
# ---------------------------------------------------------------------------

def diffusion_residual(net: NetworkParams, c, c_dot) -> jnp.ndarray:
    """r = c_dot + H(c) c, one HVP with direction c."""
    c = jnp.asarray(c, dtype=jnp.float64)
    c_dot = jnp.asarray(c_dot, dtype=jnp.float64)
    if c_dot.shape != c.shape:
        raise ValueError(f"c_dot has shape {c_dot.shape}, expected {c.shape}")
    return c_dot + input_hvp(net, c, c)


def mechanics_residual(net: NetworkParams, m_mat, x, x_dot, x_ddot) -> jnp.ndarray:
    """r = M x_ddot + (H_vx + H_xv) x_dot + H_xx x on the (x, x_dot) input.

    H_vx x_dot and (H_xv x_dot + H_xx x) come from two HVPs on the
    concatenated input u = (x, x_dot): the second uses direction u itself,
    the first direction (x_dot, 0).
    """
    x = jnp.asarray(x, dtype=jnp.float64)
    x_dot = jnp.asarray(x_dot, dtype=jnp.float64)
    x_ddot = jnp.asarray(x_ddot, dtype=jnp.float64)
    n = x.shape[0]
    if net.n_in != 2 * n:
        raise ValueError(
            f"network takes {net.n_in} inputs, expected 2N = {2 * n} for N = {n}"
        )
    m_mat = jnp.asarray(m_mat, dtype=jnp.float64)
    u = jnp.concatenate([x, x_dot])
    h_u = input_hvp(net, u, u)                                   # H_xx x + H_xv x_dot
    h_v = input_hvp(net, u, jnp.concatenate([x_dot, jnp.zeros(n)]))  # rows N.. give H_vx x_dot
    return m_mat @ x_ddot + h_u[:n] + h_v[n:]


def batch_loss(residual_fn: Callable, batch) -> jnp.ndarray:
    """Mean squared residual entry over a SampleBatch-like (states, rates)."""
    states = jnp.asarray(batch.states, dtype=jnp.float64)
    rates = jnp.asarray(batch.rates, dtype=jnp.float64)
    if states.shape[0] == 0:
        raise ValueError("batch is empty")
    residuals = jax.vmap(residual_fn)(states, rates)
    return jnp.mean(residuals ** 2)


# ---------------------------------------------------------------------------
# matrix extraction from a trained (or stub) network
# ---------------------------------------------------------------------------

def extract_K_diffusion(net: NetworkParams, c_probe) -> np.ndarray:
    """Symmetrized input-Hessian at the probe point: K_ij = d2D/dc_i dc_j."""
    h = np.asarray(input_hessian(net, c_probe))
    return 0.5 * (h + h.T)


def extract_matrices_mechanics(
    net: NetworkParams, probe
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(M_hat, K_hat, C_sym_hat) from the Hessian blocks at a 2N probe.

    M_hat is the (x_dot, x_dot) block, K_hat the (x, x) block, and C_sym_hat
    the sum of the two cross blocks. Only K_hat and C_sym_hat are constrained
    by the training loss (M is treated as known there); M_hat is still exact
    for quadratic stubs.
    """
    probe = np.asarray(probe, dtype=float)
    if probe.ndim != 1 or probe.size % 2 != 0:
        raise ValueError(f"probe must be a flat 2N vector, got shape {probe.shape}")
    n = probe.size // 2
    h = np.asarray(input_hessian(net, probe))
    h = 0.5 * (h + h.T)
    m_hat = h[n:, n:]
    k_hat = h[:n, :n]
    c_sym_hat = h[n:, :n] + h[:n, n:]
    return m_hat, k_hat, c_sym_hat


# ---------------------------------------------------------------------------
# exact reference networks
# ---------------------------------------------------------------------------

def diffusion_reference_net(k: np.ndarray) -> NetworkParams:
    """Quadratic net whose input Hessian is exactly K (D = 1/2 c^T K c)."""
    return quadratic_net(k)


def mechanics_reference_net(sys: MechanicsSystem) -> NetworkParams:
    """Quadratic net realizing D on the concatenated (x, x_dot) input.

    D = 1/2 u^T Q u with Q = [[K, C^T/2], [C/2, M]]; requires symmetric M, K
    (C may be arbitrary; only its symmetric part is observable).
    """
    n = sys.n
    q = np.zeros((2 * n, 2 * n))
    q[:n, :n] = sys.k
    q[:n, n:] = 0.5 * sys.c.T
    q[n:, :n] = 0.5 * sys.c
    q[n:, n:] = sys.m
    return quadratic_net(q)
