"""Objective, exact gradient, and the GRAPE optimization loop."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .core import ControlSet, Generator, TimeGrid, Trajectory
from .functionals import (
    FunctionalSpec,
    chi_numeric,
    chi_states,
    evaluate_j_t,
    running_cost,
)
from .optimizer import LineSearchFailure, OptimizerOptions, iterate
from .propagators import backward_propagate, forward_propagate, step_derivatives, step_operators

__all__ = [
    "ControlProblem",
    "IterationRecord",
    "GrapeResult",
    "evaluate_objective",
    "compute_gradient",
    "finite_difference_gradient",
    "relative_error",
    "optimize",
]

logger = logging.getLogger(__name__)

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Trajectories, time grid, functional, and starting controls.

    Trajectory weights are normalized to sum to one on construction.
    """

    trajectories: tuple[Trajectory, ...]
    grid: TimeGrid
    functional: FunctionalSpec
    initial_controls: ControlSet

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("a control problem needs at least one trajectory")
        controls = self.initial_controls
        if controls.nt != self.grid.nt:
            raise ValueError(
                f"initial controls have {controls.nt} intervals, time grid has {self.grid.nt}"
            )
        for k, traj in enumerate(trajs):
            L = traj.generator.num_controls
            if L != controls.num_controls:
                raise ValueError(
                    f"trajectory {k}: generator takes {L} controls, "
                    f"initial controls have {controls.num_controls}"
                )
            if self.functional.is_builtin and traj.target_state is None:
                raise ValueError(
                    f"trajectory {k} has no target state, required by {self.functional.kind.name}"
                )
            if traj.generator.is_hermitian():
                norm = np.linalg.norm(traj.initial_state)
                if abs(norm - 1.0) > NORM_TOL:
                    raise ValueError(f"trajectory {k}: initial state has norm {norm!r}, expected 1")
        total = sum(t.weight for t in trajs)
        trajs = tuple(dataclasses.replace(t, weight=t.weight / total) for t in trajs)
        object.__setattr__(self, "trajectories", trajs)

    @property
    def weights(self) -> NDArray[np.float64]:
        return np.array([t.weight for t in self.trajectories])

    @property
    def targets(self) -> list:
        return [t.target_state for t in self.trajectories]


@dataclass
class IterationRecord:
    iteration: int
    j_total: float
    j_t: float
    j_running: float
    grad_norm: float
    step_size: float
    fidelity: float


@dataclass
class GrapeResult:
    """Outcome of `optimize`.

    `reason` is one of ``"tolerance reached"``, ``"max iterations"``, or
    ``"line-search failure"``.
    """

    optimized_controls: ControlSet
    records: list[IterationRecord]
    converged: bool
    reason: str

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration


@dataclass
class _Evaluation:
    j_total: float
    j_t: float
    j_a: float
    gradient: NDArray[np.float64] | None
    finals: list


@contextmanager
def _mapper(workers: int | None):
    if workers is None or workers <= 1:
        yield lambda fn, items: list(map(fn, items))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield lambda fn, items: list(pool.map(fn, items))


def _unique_generators(trajs: Sequence[Trajectory]) -> list[Generator]:
    seen: dict[int, Generator] = {}
    for traj in trajs:
        seen.setdefault(id(traj.generator), traj.generator)
    return list(seen.values())


def _evaluate(
    problem: ControlProblem, controls: ControlSet, gradient: bool, workers: int | None = None
) -> _Evaluation:
    grid = problem.grid
    trajs = problem.trajectories
    weights = problem.weights
    targets = problem.targets
    spec = problem.functional
    generators = _unique_generators(trajs)

    with _mapper(workers) as pmap:
        if gradient:
            steps = pmap(lambda g: step_derivatives(g, controls, grid), generators)
            cache = {id(g): s for g, s in zip(generators, steps)}
            U_of = {key: s[0] for key, s in cache.items()}
        else:
            ops = pmap(lambda g: step_operators(g, controls, grid), generators)
            U_of = {id(g): U for g, U in zip(generators, ops)}

        records = pmap(
            lambda traj: forward_propagate(
                traj, controls, grid, store=gradient, step_ops=U_of[id(traj.generator)]
            ),
            trajs,
        )
        finals = [r.final_state for r in records]
        j_t = evaluate_j_t(spec, finals, targets, weights)
        j_a, grad_a = running_cost(controls, grid, spec.lambda_a)
        if not gradient:
            return _Evaluation(j_t + j_a, j_t, j_a, None, finals)

        if spec.is_builtin:
            chis = chi_states(spec, finals, targets, weights)
        else:
            chis = chi_numeric(spec.custom_j, finals, targets, weights)

        def contribution(k):
            chi = backward_propagate(chis[k], records[k])
            psi = records[k].states
            D = cache[id(trajs[k].generator)][1]
            d_psi = np.einsum("nlij,nj->nli", D, psi[:-1])
            overlaps = np.einsum("ni,nli->nl", chi[1:].conj(), d_psi)
            return -2.0 * overlaps.real

        parts = pmap(contribution, range(len(trajs)))

    grad = np.zeros_like(controls.values)
    for part in parts:
        grad += part
    grad += grad_a
    return _Evaluation(j_t + j_a, j_t, j_a, grad, finals)


def evaluate_objective(
    problem: ControlProblem, controls: ControlSet | None = None, workers: int | None = None
) -> float:
    """J = J_T + J_a at `controls` (default: the problem's initial controls)."""
    controls = problem.initial_controls if controls is None else controls
    return _evaluate(problem, controls, gradient=False, workers=workers).j_total


def compute_gradient(
    problem: ControlProblem, controls: ControlSet | None = None, workers: int | None = None
) -> tuple[float, NDArray[np.float64]]:
    """J and its exact gradient, an ``NT x L`` matrix.

    Trajectory contributions are summed in trajectory order, so the result
    does not depend on `workers`.
    """
    controls = problem.initial_controls if controls is None else controls
    ev = _evaluate(problem, controls, gradient=True, workers=workers)
    return ev.j_total, ev.gradient


def finite_difference_gradient(
    problem: ControlProblem,
    controls: ControlSet | None = None,
    h: float = 1e-6,
    relative: bool = False,
) -> NDArray[np.float64]:
    """Central-difference gradient of `evaluate_objective`, entry by entry.

    With `relative`, entry (n, l) uses the step ``h * (1 + |eps_nl|)``.
    """
    if not h > 0:
        raise ValueError(f"h must be > 0, got {h!r}")
    controls = problem.initial_controls if controls is None else controls
    eps = controls.values
    grad = np.empty_like(eps)
    for n, l in np.ndindex(*eps.shape):
        step = h * (1.0 + abs(eps[n, l])) if relative else h
        up = eps.copy()
        down = eps.copy()
        up[n, l] += step
        down[n, l] -= step
        j_up = evaluate_objective(problem, controls.with_values(up))
        j_down = evaluate_objective(problem, controls.with_values(down))
        grad[n, l] = (j_up - j_down) / (2 * step)
    return grad


def relative_error(value: NDArray, reference: NDArray) -> float:
    """max|value - reference| / max|reference| (absolute if the reference vanishes)."""
    diff = float(np.max(np.abs(np.asarray(value) - np.asarray(reference)), initial=0.0))
    scale = float(np.max(np.abs(reference), initial=0.0))
    return diff / scale if scale > 0 else diff


def _record(it, spec: FunctionalSpec) -> IterationRecord:
    ev: _Evaluation = it.extra
    fidelity = 1.0 - ev.j_t if spec.is_builtin else float("nan")
    return IterationRecord(
        iteration=it.iteration,
        j_total=ev.j_total,
        j_t=ev.j_t,
        j_running=ev.j_a,
        grad_norm=float(np.max(np.abs(it.grad), initial=0.0)),
        step_size=float(it.step),
        fidelity=fidelity,
    )


def optimize(
    problem: ControlProblem,
    options: OptimizerOptions | None = None,
    callback: Callable[[IterationRecord], None] | None = None,
    workers: int | None = None,
) -> GrapeResult:
    """Minimize J over the control values.

    Stops when J_T <= `j_t_tol`, |Delta J| <= `delta_j_tol`,
    max|grad J| <= `grad_tol` (zero tolerances are disabled), or after
    `max_iter` iterations. A failed L-BFGS line search ends the run early
    with the best controls found so far.
    """
    options = options or OptimizerOptions()
    template = problem.initial_controls

    def fun(x):
        ev = _evaluate(problem, template.with_values(x), gradient=True, workers=workers)
        return ev.j_total, ev.gradient.reshape(-1), ev

    records: list[IterationRecord] = []
    x_best = template.flatten()
    converged, reason = False, "max iterations"
    try:
        for it in iterate(fun, x_best, options):
            rec = _record(it, problem.functional)
            records.append(rec)
            x_best = it.x
            logger.debug("iter %d: J=%.6e J_T=%.6e", rec.iteration, rec.j_total, rec.j_t)
            if callback is not None:
                callback(rec)
            if options.j_t_tol > 0 and rec.j_t <= options.j_t_tol:
                converged, reason = True, "tolerance reached"
            elif (
                options.delta_j_tol > 0
                and len(records) > 1
                and abs(rec.j_total - records[-2].j_total) <= options.delta_j_tol
            ):
                converged, reason = True, "tolerance reached"
            elif options.grad_tol > 0 and rec.grad_norm <= options.grad_tol:
                converged, reason = True, "tolerance reached"
            if converged or rec.iteration >= options.max_iter:
                break
    except LineSearchFailure as exc:
        logger.info("stopping: %s", exc)
        reason = "line-search failure"
    return GrapeResult(template.with_values(x_best), records, converged, reason)
