"""Dataset builders for the desk-scale experiments.

Every dataset is a SampleBatch of matched (state, rate) records sampled from
oracle trajectories, plus a provenance manifest that fully determines
regeneration: the same manifest always reproduces the same bytes. Rates are
evaluated from the governing operator at each snapshot (not frame
differences) unless the frame-difference mode is explicitly requested.

Conventions: mechanics states are the concatenation (x, x_dot) with rates
x_ddot; diffusion states are concentration vectors c with rates c_dot.
Concentrations are mol/um^3, lengths um, times s.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .lagrangian import MechanicsSystem
from .oracle import (
    DiffusionGrid,
    Trajectory,
    assemble_diffusion_stiffness,
    lehmer_matrix,
    mass_spring_damper_rate,
    rk45_integrate,
)

FORMAT_VERSION = 1

MATRIX_DIFFUSIVITY = 1.0       # um^2/s, high-diffusivity matrix phase
PRECIPITATE_DIFFUSIVITY = 0.01  # um^2/s, low-diffusivity precipitate phase


@dataclass
class SampleBatch:
    """Matched state/rate records with timestamps and provenance."""

    kind: str  # "mechanics" | "diffusion"
    states: np.ndarray
    rates: np.ndarray
    times: np.ndarray
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("mechanics", "diffusion"):
            raise ValueError(f"unknown batch kind {self.kind!r}")
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.rates.shape[0] != self.states.shape[0]:
            raise ValueError("rates row count must equal states row count")
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times length must equal states row count")
        if not (np.isfinite(self.states).all() and np.isfinite(self.rates).all()):
            raise ValueError("all entries must be finite")

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


@dataclass
class ShapeMask:
    """Binary per-cell indicator of precipitate membership."""

    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        if v.sum() == 0:
            raise ValueError("mask must have at least one cell set")
        self.values = v.astype(np.int8)

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# mechanics (damped mass-spring)
# ---------------------------------------------------------------------------

def gen_mechanics_dataset(
    sys: MechanicsSystem,
    ic_values: Sequence[float],
    t_end: float = 20.0,
    n_samples_per_traj: int = 50,
    seed: int = 0,
    tol: float = 1e-9,
) -> SampleBatch:
    """One trajectory per point of the Cartesian IC grid over (x, x_dot).

    ic_values are the per-axis levels; the grid has len(ic_values)^(2N)
    points. Each trajectory is sampled uniformly in time and the
    accelerations are evaluated from the governing equation at each sample.
    """
    ic_values = [float(v) for v in ic_values]
    if not ic_values:
        raise ValueError("ic_values must be nonempty")
    n = sys.n
    rate = mass_spring_damper_rate(sys)
    t_eval = np.linspace(0.0, t_end, n_samples_per_traj)
    m_inv = np.linalg.inv(sys.m)
    c_sym, k_mat = sys.c_sym, sys.k

    states, rates, times = [], [], []
    for ic in itertools.product(ic_values, repeat=2 * n):
        y0 = np.asarray(ic, dtype=float)
        traj = rk45_integrate(rate, y0, (0.0, t_end), tol=tol, t_eval=t_eval)
        x, xd = traj.states[:, :n], traj.states[:, n:]
        xdd = -(xd @ c_sym.T + x @ k_mat.T) @ m_inv.T
        states.append(traj.states)
        rates.append(xdd)
        times.append(traj.times)

    provenance = {
        "format_version": FORMAT_VERSION,
        "experiment": "mechanics",
        "system": {"M": sys.m.tolist(), "C": sys.c.tolist(), "K": sys.k.tolist()},
        "ic_values": ic_values,
        "n_trajectories": len(ic_values) ** (2 * n),
        "t_end": t_end,
        "n_samples_per_traj": n_samples_per_traj,
        "seed": seed,
        "solver_tol": tol,
    }
    return SampleBatch("mechanics", np.vstack(states), np.vstack(rates),
                       np.concatenate(times), provenance)


# ---------------------------------------------------------------------------
# diffusion datasets
# ---------------------------------------------------------------------------

def _diffusion_batch(k_mat, ics, t_end, n_samples_per_traj, tol, provenance):
    rate = lambda t, c: -k_mat @ c  # noqa: E731
    t_eval = np.linspace(0.0, t_end, n_samples_per_traj)
    states, rates, times = [], [], []
    for c0 in ics:
        traj = rk45_integrate(rate, np.asarray(c0, dtype=float), (0.0, t_end),
                              tol=tol, t_eval=t_eval)
        states.append(traj.states)
        rates.append(-traj.states @ k_mat.T)
        times.append(traj.times)
    return SampleBatch("diffusion", np.vstack(states), np.vstack(rates),
                       np.concatenate(times), provenance)


TWO_PIXEL_IC_LEVELS = (0.1, 0.4, 0.7, 1.0)  # 0.1 to 1 in increments of 0.3


def gen_two_pixel_dataset(
    k: np.ndarray,
    t_end: float = 3.0,
    n_samples_per_traj: int = 100,
    seed: int = 0,
    tol: float = 1e-9,
) -> SampleBatch:
    """16 trajectories from the 4x4 IC grid {0.1, 0.4, 0.7, 1.0}^2."""
    k = np.asarray(k, dtype=float)
    if k.shape != (2, 2):
        raise ValueError(f"K must be 2x2, got {k.shape}")
    ics = list(itertools.product(TWO_PIXEL_IC_LEVELS, repeat=2))
    provenance = {
        "format_version": FORMAT_VERSION,
        "experiment": "two_pixel",
        "K": k.tolist(),
        "ic_levels": list(TWO_PIXEL_IC_LEVELS),
        "n_trajectories": len(ics),
        "t_end": t_end,
        "n_samples_per_traj": n_samples_per_traj,
        "seed": seed,
        "solver_tol": tol,
    }
    return _diffusion_batch(k, ics, t_end, n_samples_per_traj, tol, provenance)


def lehmer_initial_conditions(n: int = 10, ic_scale: float = 1.0) -> np.ndarray:
    """Case I (1-based) has IC sqrt(I) * [1, 1/2, ..., 1/n], scaled."""
    base = 1.0 / np.arange(1, n + 1)
    return np.stack([ic_scale * np.sqrt(i) * base for i in range(1, n + 1)])


def gen_lehmer_dataset(
    n: int = 10,
    t_end: float = 6.0,
    n_samples_per_traj: int = 100,
    ic_scale: float = 1.0,
    seed: int = 0,
    tol: float = 1e-9,
) -> SampleBatch:
    """n trajectories of the n-pixel model with a Lehmer stiffness matrix.

    ic_scale=0.5 produces the halved-IC extrapolation set.
    """
    k = lehmer_matrix(n)
    ics = lehmer_initial_conditions(n, ic_scale)
    provenance = {
        "format_version": FORMAT_VERSION,
        "experiment": "lehmer",
        "n_pixels": n,
        "ic_scale": ic_scale,
        "n_trajectories": n,
        "t_end": t_end,
        "n_samples_per_traj": n_samples_per_traj,
        "seed": seed,
        "solver_tol": tol,
    }
    return _diffusion_batch(k, ics, t_end, n_samples_per_traj, tol, provenance)


# ---------------------------------------------------------------------------
# microstructure grid and image-sequence datasets
# ---------------------------------------------------------------------------

def default_microstructure_mask(nx: int = 8, ny: int = 8) -> ShapeMask:
    """Fixed two-block precipitate layout for the two-phase microstructure."""
    if nx < 8 or ny < 8:
        raise ValueError("microstructure layout needs at least an 8x8 grid")
    v = np.zeros((ny, nx), dtype=np.int8)
    v[3:6, 1:5] = 1
    v[6:8, 5:7] = 1
    return ShapeMask(v, name="microstructure")


def microstructure_grid(
    mask: ShapeMask,
    cell_size: float = 1.0,
    matrix_diffusivity: float = MATRIX_DIFFUSIVITY,
    precipitate_diffusivity: float = PRECIPITATE_DIFFUSIVITY,
) -> DiffusionGrid:
    """Two-phase grid: high-diffusivity matrix, low-diffusivity precipitate."""
    ny, nx = mask.shape
    d = np.where(mask.values == 1, precipitate_diffusivity, matrix_diffusivity)
    return DiffusionGrid(nx=nx, ny=ny, cell_size=cell_size, diffusivity=d)


def top_row_initial_state(grid: DiffusionGrid, value: float = 1.0) -> np.ndarray:
    """Concentration applied to the top surface, zero elsewhere (flattened)."""
    c = np.zeros((grid.ny, grid.nx))
    c[0, :] = value
    return c.ravel()


def gen_microstructure_dataset(
    grid: DiffusionGrid,
    mask: ShapeMask,
    t_end: float = 0.5,
    n_steps: int = 100,
    initial_state: Optional[np.ndarray] = None,
    rate_mode: str = "operator",
    seed: int = 0,
    tol: float = 1e-9,
) -> SampleBatch:
    """Image-sequence dataset on the two-phase grid.

    The default initial condition is concentration 1 on the top row under
    all-zero-flux boundaries. n_steps uniformly spaced snapshots are
    recorded; rates are -K c at each snapshot (rate_mode="operator") or
    differences across consecutive frames (rate_mode="frame_diff").
    """
    if mask.shape != (grid.ny, grid.nx):
        raise ValueError(
            f"mask shape {mask.shape} does not match grid ({grid.ny}, {grid.nx})"
        )
    if rate_mode not in ("operator", "frame_diff"):
        raise ValueError(f"unknown rate_mode {rate_mode!r}")
    k_mat = assemble_diffusion_stiffness(grid)
    c0 = top_row_initial_state(grid) if initial_state is None else (
        np.asarray(initial_state, dtype=float).ravel()
    )
    if c0.size != grid.n_cells:
        raise ValueError(f"initial state has {c0.size} cells, grid has {grid.n_cells}")
    t_eval = np.linspace(0.0, t_end, n_steps)
    traj = rk45_integrate(lambda t, c: -k_mat @ c, c0, (0.0, t_end),
                          tol=tol, t_eval=t_eval)
    if rate_mode == "operator":
        rates = -traj.states @ k_mat.T
    else:
        rates = np.gradient(traj.states, t_eval, axis=0)
    provenance = {
        "format_version": FORMAT_VERSION,
        "experiment": "microstructure",
        "grid": {"nx": grid.nx, "ny": grid.ny, "cell_size": grid.cell_size},
        "mask": mask.values.tolist(),
        "mask_name": mask.name,
        "matrix_diffusivity": float(grid.diffusivity.max()),
        "precipitate_diffusivity": float(grid.diffusivity.min()),
        "initial_state": "top_row" if initial_state is None else "custom",
        "t_end": t_end,
        "n_steps": n_steps,
        "rate_mode": rate_mode,
        "seed": seed,
        "solver_tol": tol,
    }
    return SampleBatch("diffusion", traj.states, rates, traj.times, provenance)


def gen_precipitate_shapes(nx: int = 8, ny: int = 8) -> List[ShapeMask]:
    """Four deterministic precipitate shapes: square, disk, plus, L."""
    if nx < 8 or ny < 8:
        raise ValueError("shapes need at least an 8x8 grid")
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0

    square = np.zeros((ny, nx), dtype=np.int8)
    square[ny // 2 - 2:ny // 2 + 2, nx // 2 - 2:nx // 2 + 2] = 1

    disk = np.zeros((ny, nx), dtype=np.int8)
    yy, xx = np.mgrid[0:ny, 0:nx]
    disk[(yy - cy) ** 2 + (xx - cx) ** 2 <= (min(nx, ny) / 2.75) ** 2] = 1

    plus = np.zeros((ny, nx), dtype=np.int8)
    plus[ny // 2 - 1:ny // 2 + 1, 1:nx - 1] = 1
    plus[1:ny - 1, nx // 2 - 1:nx // 2 + 1] = 1

    ell = np.zeros((ny, nx), dtype=np.int8)
    ell[1:ny - 1, 1:3] = 1
    ell[ny - 3:ny - 1, 1:nx - 2] = 1

    return [
        ShapeMask(square, name="square"),
        ShapeMask(disk, name="disk"),
        ShapeMask(plus, name="plus"),
        ShapeMask(ell, name="ell"),
    ]


def gen_shape_diffusion_dataset(
    grid: DiffusionGrid,
    shapes: Sequence[ShapeMask],
    t_end: float = 0.02,
    n_steps_per_shape: int = 100,
    seed: int = 0,
    tol: float = 1e-9,
) -> SampleBatch:
    """Forward trajectories of shape-valued initial concentrations.

    All shapes diffuse through the same grid (one shared stiffness matrix),
    so a single network can be trained on the concatenated samples.
    """
    k_mat = assemble_diffusion_stiffness(grid)
    t_eval = np.linspace(0.0, t_end, n_steps_per_shape)
    states, rates, times = [], [], []
    for shape in shapes:
        if shape.shape != (grid.ny, grid.nx):
            raise ValueError(f"shape {shape.name!r} does not match the grid")
        c0 = shape.values.astype(float).ravel()
        traj = rk45_integrate(lambda t, c: -k_mat @ c, c0, (0.0, t_end),
                              tol=tol, t_eval=t_eval)
        states.append(traj.states)
        rates.append(-traj.states @ k_mat.T)
        times.append(traj.times)
    provenance = {
        "format_version": FORMAT_VERSION,
        "experiment": "reverse_shapes",
        "grid": {"nx": grid.nx, "ny": grid.ny, "cell_size": grid.cell_size},
        "diffusivity": grid.diffusivity.tolist(),
        "shape_names": [s.name for s in shapes],
        "shapes": [s.values.tolist() for s in shapes],
        "t_end": t_end,
        "n_steps_per_shape": n_steps_per_shape,
        "seed": seed,
        "solver_tol": tol,
    }
    return SampleBatch("diffusion", np.vstack(states), np.vstack(rates),
                       np.concatenate(times), provenance)


# ---------------------------------------------------------------------------
# file format: CSV samples + JSON manifest
# ---------------------------------------------------------------------------

def save_batch(batch: SampleBatch, csv_path, manifest_path) -> None:
    """Write `t, s_1..s_k, r_1..r_m` CSV plus the JSON manifest."""
    k = batch.states.shape[1]
    m = batch.rates.shape[1]
    header = ",".join(
        ["t"] + [f"s_{i + 1}" for i in range(k)] + [f"r_{i + 1}" for i in range(m)]
    )
    table = np.hstack([batch.times[:, None], batch.states, batch.rates])
    np.savetxt(csv_path, table, delimiter=",", header=header, comments="",
               fmt="%.17g")
    manifest = dict(batch.provenance)
    manifest["kind"] = batch.kind
    manifest["n_samples"] = int(batch.n_samples)
    manifest["state_width"] = int(k)
    manifest["rate_width"] = int(m)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_batch(csv_path, manifest_path) -> SampleBatch:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported dataset format version {manifest.get('format_version')!r}"
        )
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    k = int(manifest["state_width"])
    m = int(manifest["rate_width"])
    if table.shape[1] != 1 + k + m:
        raise ValueError(
            f"CSV has {table.shape[1]} columns, manifest promises {1 + k + m}"
        )
    kind = manifest.pop("kind")
    manifest.pop("n_samples", None)
    manifest.pop("state_width", None)
    manifest.pop("rate_width", None)
    return SampleBatch(kind, table[:, 1:1 + k], table[:, 1 + k:],
                       table[:, 0], manifest)
