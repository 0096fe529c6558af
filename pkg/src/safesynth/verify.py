"""Validation tests and ground-truth checks for synthesised certificates.

Two distinct jobs live here and must not be confused:

* `violation_frequency` is part of the certification pipeline: it re-evaluates
  the sampled one-step condition on a fresh, independent validation dataset
  and counts strict sign violations.  It touches only recorded data, never
  the plant.

* everything else (condition grids, closed-loop simulation, empirical safety)
  is diagnostic tooling that may query the plant directly.  The synthesis
  path never imports these; they exist so a certificate can be confronted
  with the true dynamics in tests and reports.
"""

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GeometryError
from .geometry import (
    Box,
    RegionUnion,
    SampleSpace,
    box_grid,
    distance_to_region,
    sample_uniform,
)
from .plant import BlackBoxSystem, Dataset, Role, Sample
from .polynomial import eval_poly_many
from .scp import CertificateValues


@dataclass(frozen=True)
class ViolationRecord:
    index: int
    sample: Sample
    residual: float
    violated: bool


def step_residuals(cert: CertificateValues, dataset: Dataset) -> np.ndarray:
    """Sampled one-step condition residuals, positive means violated:

        barrier(x') - barrier(x) + sum(u - F(x)) - budget - objective
    """
    bx = eval_poly_many(cert.barrier, dataset.xs)
    bxn = eval_poly_many(cert.barrier, dataset.x_nexts)
    controls = np.column_stack(
        [eval_poly_many(c, dataset.xs) for c in cert.controllers]
    )
    return (
        bxn
        - bx
        + np.sum(dataset.us - controls, axis=1)
        - cert.growth_budget
        - cert.objective
    )


KNIFE_EDGE_TOL = 1e-12


def violation_frequency(
    cert: CertificateValues, validation: Dataset
) -> tuple[int, list[ViolationRecord]]:
    """Count strict violations of the one-step condition on fresh data.

    The indicator is a strict sign test, except that residuals within
    1e-12 of zero count as non-violations: they are numerical knife-edges,
    surfaced via `knife_edge_count` rather than folded into the frequency.
    """
    if validation.role != Role.VALIDATION:
        raise GeometryError("violation test requires a validation-role dataset")
    residuals = step_residuals(cert, validation)
    flags = residuals > KNIFE_EDGE_TOL
    records = [
        ViolationRecord(i, validation[i], float(residuals[i]), bool(flags[i]))
        for i in range(len(validation))
    ]
    return int(np.sum(flags)), records


def knife_edge_count(records: Sequence[ViolationRecord], tol: float = KNIFE_EDGE_TOL) -> int:
    return sum(1 for r in records if abs(r.residual) <= tol)


@dataclass(frozen=True)
class ConditionReport:
    """Worst residuals of the four barrier conditions on dense grids.

    Residual convention: <= 0 everywhere means the condition holds.
    """

    worst_initial: float        # barrier - cap over the initial region
    worst_unsafe: float         # floor - barrier over the unsafe region
    worst_step: float           # one-step condition (with true plant) over X x U
    worst_budget: float         # budget * T - (floor - cap)
    initial_grid: np.ndarray
    initial_values: np.ndarray
    unsafe_grid: np.ndarray
    unsafe_values: np.ndarray
    step_grid: np.ndarray
    step_values: np.ndarray

    @property
    def passed(self) -> bool:
        return (
            self.worst_initial < 0.0
            and self.worst_unsafe <= 0.0
            and self.worst_step <= 0.0
            and self.worst_budget <= 0.0
        )

    def summary(self) -> dict:
        return {
            "worst_initial": self.worst_initial,
            "worst_unsafe": self.worst_unsafe,
            "worst_step": self.worst_step,
            "worst_budget": self.worst_budget,
            "passed": self.passed,
        }


def check_cbf_conditions(
    cert: CertificateValues,
    plant: BlackBoxSystem,
    initial_region: RegionUnion,
    unsafe_region: RegionUnion,
    state_box: Box,
    input_box: Box,
    horizon: int,
    region_points: int = 2003,
    step_points: int = 201,
) -> ConditionReport:
    """Evaluate all four barrier conditions against the true plant on grids.

    Ground truth only: the plant is queried on a dense state x input grid for
    the one-step condition, which the synthesis path is never allowed to do.
    """
    init_grid = np.vstack([box_grid(p, region_points) for p in initial_region.parts])
    init_vals = eval_poly_many(cert.barrier, init_grid) - cert.initial_cap

    unsafe_grid = np.vstack([box_grid(p, region_points) for p in unsafe_region.parts])
    unsafe_vals = cert.unsafe_floor - eval_poly_many(cert.barrier, unsafe_grid)

    xs = box_grid(state_box, step_points)
    us = box_grid(input_box, step_points)
    nx, nu = len(xs), len(us)
    pair_x = np.repeat(xs, nu, axis=0)
    pair_u = np.tile(us, (nx, 1))
    x_next = np.asarray(plant.step_batch(pair_x, pair_u), dtype=float)
    controls = np.column_stack([eval_poly_many(c, pair_x) for c in cert.controllers])
    step_vals = (
        eval_poly_many(cert.barrier, x_next)
        - eval_poly_many(cert.barrier, pair_x)
        + np.sum(pair_u - controls, axis=1)
        - cert.growth_budget
    )
    worst_budget = cert.growth_budget * horizon - (cert.unsafe_floor - cert.initial_cap)
    return ConditionReport(
        worst_initial=float(np.max(init_vals)),
        worst_unsafe=float(np.max(unsafe_vals)),
        worst_step=float(np.max(step_vals)),
        worst_budget=float(worst_budget),
        initial_grid=init_grid,
        initial_values=init_vals,
        unsafe_grid=unsafe_grid,
        unsafe_values=unsafe_vals,
        step_grid=np.hstack([pair_x, pair_u]),
        step_values=step_vals,
    )


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (T+1, n)
    safe: bool
    clamp_events: int


def controller_output(cert: CertificateValues, x: np.ndarray) -> np.ndarray:
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    return np.array([eval_poly_many(c, x2)[0] for c in cert.controllers])


def simulate_closed_loop(
    plant: BlackBoxSystem,
    cert: CertificateValues,
    x0: Sequence[float],
    horizon: int,
    input_box: Box,
    unsafe_region: RegionUnion,
) -> Trajectory:
    """Roll the controller forward; outputs are clamped to the input box and
    every clamp event is counted (a certified controller should need none)."""
    x = np.asarray(x0, dtype=float)
    states = [x.copy()]
    clamps = 0
    for _ in range(horizon):
        u = controller_output(cert, x)
        clamped = np.clip(u, input_box.lower_arr, input_box.upper_arr)
        if not np.array_equal(u, clamped):
            clamps += 1
        x = np.asarray(plant.step(x, clamped), dtype=float)
        states.append(x.copy())
    arr = np.asarray(states)
    safe = not any(unsafe_region.contains_point(s) for s in arr)
    return Trajectory(arr, safe, clamps)


@dataclass(frozen=True)
class SafetySummary:
    fraction_safe: float
    min_unsafe_distance: float
    failing_states: tuple[tuple[float, ...], ...]
    clamp_events: int
    n_trajectories: int

    def to_dict(self) -> dict:
        return {
            "fraction_safe": self.fraction_safe,
            "min_unsafe_distance": self.min_unsafe_distance,
            "failing_states": [list(s) for s in self.failing_states],
            "clamp_events": self.clamp_events,
            "n_trajectories": self.n_trajectories,
        }


def empirical_safety(
    plant: BlackBoxSystem,
    cert: CertificateValues,
    initial_region: RegionUnion,
    unsafe_region: RegionUnion,
    input_box: Box,
    horizon: int,
    grid_points: int = 401,
) -> SafetySummary:
    """Simulate from a grid over the initial region and summarise safety."""
    starts = np.vstack([box_grid(p, grid_points) for p in initial_region.parts])
    failing: list[tuple[float, ...]] = []
    min_dist = np.inf
    clamps = 0
    for x0 in starts:
        traj = simulate_closed_loop(plant, cert, x0, horizon, input_box, unsafe_region)
        clamps += traj.clamp_events
        for s in traj.states:
            min_dist = min(min_dist, distance_to_region(s, unsafe_region))
        if not traj.safe:
            failing.append(tuple(float(v) for v in x0))
    frac = 1.0 - len(failing) / len(starts)
    return SafetySummary(
        fraction_safe=frac,
        min_unsafe_distance=float(min_dist),
        failing_states=tuple(failing),
        clamp_events=clamps,
        n_trajectories=len(starts),
    )


def emit_plot_data(
    cert: CertificateValues,
    plant: BlackBoxSystem,
    state_box: Box,
    input_box: Box,
    out_dir: str,
    barrier_points: int = 401,
    surface_points: int = 101,
) -> dict[str, str]:
    """Write the barrier curve and one-step-condition surface as CSV.

    `barrier.csv` has columns x,B,gamma,lambda; `g3_surface.csv` has columns
    x,u,g3 with surface_points^2 rows.  One-dimensional state and input only.
    """
    if state_box.dim != 1 or input_box.dim != 1:
        raise GeometryError("plot emission supports 1-D state and input spaces")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    barrier_path = os.path.join(out_dir, "barrier.csv")
    xs = np.linspace(state_box.lower[0], state_box.upper[0], barrier_points)
    bvals = eval_poly_many(cert.barrier, xs[:, None])
    with open(barrier_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "B", "gamma", "lambda"])
        for x, b in zip(xs, bvals):
            writer.writerow([f"{x:.17g}", f"{b:.17g}",
                             f"{cert.initial_cap:.17g}", f"{cert.unsafe_floor:.17g}"])
    paths["barrier"] = barrier_path

    surface_path = os.path.join(out_dir, "g3_surface.csv")
    gx = np.linspace(state_box.lower[0], state_box.upper[0], surface_points)
    gu = np.linspace(input_box.lower[0], input_box.upper[0], surface_points)
    pair_x = np.repeat(gx, surface_points)[:, None]
    pair_u = np.tile(gu, surface_points)[:, None]
    x_next = np.asarray(plant.step_batch(pair_x, pair_u), dtype=float)
    controls = np.column_stack([eval_poly_many(c, pair_x) for c in cert.controllers])
    g3 = (
        eval_poly_many(cert.barrier, x_next)
        - eval_poly_many(cert.barrier, pair_x)
        + np.sum(pair_u - controls, axis=1)
        - cert.growth_budget
        - cert.objective
    )
    with open(surface_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "u", "g3"])
        for x, u, g in zip(pair_x[:, 0], pair_u[:, 0], g3):
            writer.writerow([f"{x:.17g}", f"{u:.17g}", f"{g:.17g}"])
    paths["g3_surface"] = surface_path
    return paths


def estimate_lipschitz(
    cert: CertificateValues,
    plant: BlackBoxSystem,
    space: SampleSpace,
    n_pairs: int = 2000,
    seed: int = 0,
    spread: float = 1e-3,
) -> float:
    """Empirical LOWER bound on the constraint Lipschitz constant.

    Sampled difference quotients of the one-step condition at the given
    certificate; the true constant can only be larger, so this can expose a
    configured bound as too small but can never validate it.
    """
    base = sample_uniform(space, n_pairs, seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    offsets = (rng.random(base.shape) - 0.5) * spread * space.box.sides()
    other = np.clip(base + offsets, space.box.lower_arr, space.box.upper_arr)
    n = plant.state_dim

    def gvals(points: np.ndarray) -> np.ndarray:
        xs, us = points[:, :n], points[:, n:]
        xn = np.asarray(plant.step_batch(xs, us), dtype=float)
        controls = np.column_stack([eval_poly_many(c, xs) for c in cert.controllers])
        return (
            eval_poly_many(cert.barrier, xn)
            - eval_poly_many(cert.barrier, xs)
            + np.sum(us - controls, axis=1)
        )

    num = np.abs(gvals(base) - gvals(other))
    den = np.linalg.norm(base - other, axis=1)
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(num[ok] / den[ok]))
