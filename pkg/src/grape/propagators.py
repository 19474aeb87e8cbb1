"""Piecewise-constant propagation and exact step-propagator derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import ControlSet, Generator, TimeGrid, Trajectory

__all__ = [
    "expm",
    "step_operator",
    "step_operators",
    "step_derivatives",
    "first_order_derivatives",
    "prop_step",
    "prop_step_with_gradient",
    "PropagationRecord",
    "forward_propagate",
    "backward_propagate",
]

# Pade(13, 13) numerator coefficients, Higham (2005)
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
# scaled so that b[0] == 1 and exp(0) comes out as the exact identity
_PADE13_NORMALIZED = tuple(c / _PADE13[0] for c in _PADE13)
_THETA13 = 5.371920351148152


def expm(A: ArrayLike) -> NDArray[np.complex128]:
    """Matrix exponential by scaling and squaring with a degree-13 Pade approximant.

    Accepts a single ``(N, N)`` matrix or a stack ``(..., N, N)``; each matrix
    in a stack gets its own scaling parameter from its 1-norm.
    """
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expm needs square matrices, got shape {A.shape}")
    if A.shape[-1] == 0:
        raise ValueError("expm of a 0x0 matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("expm argument has non-finite entries")
    A = A.astype(np.complex128 if np.iscomplexobj(A) else np.float64)
    n = A.shape[-1]

    norm1 = np.abs(A).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norm1 / _THETA13))
    s = np.where(np.isfinite(s) & (s > 0), s, 0).astype(int)
    A = A / (2.0 ** s)[..., None, None]

    b = _PADE13_NORMALIZED
    eye = np.broadcast_to(np.eye(n), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
    X = np.linalg.solve(V - U, V + U)

    for j in range(int(s.max(initial=0))):
        squared = X @ X
        X = np.where((s > j)[..., None, None], squared, X)
    return X


def _evaluate_all(g: Generator, controls: ControlSet) -> NDArray[np.complex128]:
    return np.stack([g.evaluate(eps) for eps in controls.values])


def _check_shapes(g: Generator, controls: ControlSet, grid: TimeGrid):
    if controls.nt != grid.nt:
        raise ValueError(f"controls have {controls.nt} intervals, time grid has {grid.nt}")
    if controls.num_controls != g.num_controls:
        raise ValueError(
            f"controls have {controls.num_controls} columns, generator expects {g.num_controls}"
        )


def step_operator(g: Generator, eps: ArrayLike, dt: float) -> NDArray[np.complex128]:
    """U = exp(-i H(eps) dt)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return expm(-1j * dt * g.evaluate(eps))


def step_operators(g: Generator, controls: ControlSet, grid: TimeGrid) -> NDArray[np.complex128]:
    """All NT step propagators U_n as an ``(NT, N, N)`` array."""
    _check_shapes(g, controls, grid)
    H = _evaluate_all(g, controls)
    return expm(-1j * grid.dt[:, None, None] * H)


def _block_generators(H: NDArray, mus: NDArray, dt: NDArray) -> NDArray[np.complex128]:
    # H: (..., N, N), mus: (..., L, N, N), dt: (...) -> (..., L, 2N, 2N)
    N = H.shape[-1]
    L = mus.shape[-3]
    A = (-1j * dt)[..., None, None] * H
    B = np.zeros(H.shape[:-2] + (L, 2 * N, 2 * N), dtype=np.complex128)
    B[..., :N, :N] = A[..., None, :, :]
    B[..., N:, N:] = A[..., None, :, :]
    B[..., :N, N:] = (-1j * dt)[..., None, None, None] * mus
    return B


def step_derivatives(
    g: Generator, controls: ControlSet, grid: TimeGrid
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Step propagators and their exact control derivatives on every interval.

    For each interval n and control l, the derivative dU_n/d eps_nl is the
    upper-right block of ``exp([[-iH dt, -i mu_l dt], [0, -iH dt]])``.

    Returns:
        ``(U, D)`` with shapes ``(NT, N, N)`` and ``(NT, L, N, N)``.
    """
    _check_shapes(g, controls, grid)
    N, L = g.dim, g.num_controls
    H = _evaluate_all(g, controls)
    U = expm(-1j * grid.dt[:, None, None] * H)
    if L == 0:
        return U, np.zeros((grid.nt, 0, N, N), dtype=np.complex128)
    mus = np.stack([np.stack(g.control_derivatives(eps)) for eps in controls.values])
    D = expm(_block_generators(H, mus, grid.dt))[..., :N, N:]
    return U, D


def first_order_derivatives(g: Generator, eps: ArrayLike, dt: float) -> NDArray[np.complex128]:
    """The approximation dU/d eps_l ~ -i mu_l dt U, exact only if [H, mu_l] = 0.

    Only meant as a cross-check of `step_derivatives`.
    """
    U = step_operator(g, eps, dt)
    return np.stack([-1j * dt * mu @ U for mu in g.control_derivatives(eps)])


def prop_step(g: Generator, eps: ArrayLike, dt: float, psi: ArrayLike) -> NDArray[np.complex128]:
    """Propagate `psi` over one interval of length `dt` at constant controls `eps`."""
    return step_operator(g, eps, dt) @ np.asarray(psi, dtype=np.complex128)


def prop_step_with_gradient(
    g: Generator, eps: ArrayLike, dt: float, psi: ArrayLike
) -> tuple[NDArray[np.complex128], list[NDArray[np.complex128]]]:
    """Return ``(U psi, [dU/d eps_l psi for each l])`` for one interval.

    Each derivative comes from applying the 2N x 2N auxiliary-matrix
    exponential to the stacked vector ``(0, psi)``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    psi = np.asarray(psi, dtype=np.complex128)
    N = g.dim
    if psi.shape != (N,):
        raise ValueError(f"state has shape {psi.shape}, generator has dimension {N}")
    H = g.evaluate(eps)
    mus = g.control_derivatives(eps)
    if not mus:
        return expm(-1j * dt * H) @ psi, []
    blocks = expm(_block_generators(H, np.stack(mus), np.asarray(dt)))
    stacked = np.concatenate([np.zeros(N, dtype=np.complex128), psi])
    out = blocks @ stacked
    return out[0, N:], [row[:N] for row in out]


@dataclass
class PropagationRecord:
    """States at all NT + 1 grid points and, optionally, the step operators.

    Attributes:
        states: ``(NT + 1, N)`` array; ``states[0]`` is the initial state.
        step_operators: ``(NT, N, N)`` array of U_n, or None if not stored.
    """

    states: NDArray[np.complex128]
    step_operators: NDArray[np.complex128] | None = None

    @property
    def final_state(self) -> NDArray[np.complex128]:
        return self.states[-1]


def forward_propagate(
    traj: Trajectory,
    controls: ControlSet,
    grid: TimeGrid,
    store: bool = True,
    step_ops: NDArray[np.complex128] | None = None,
) -> PropagationRecord:
    """Propagate a trajectory's initial state across the whole grid.

    Args:
        traj: The trajectory to propagate.
        controls: Control values, one row per interval.
        grid: The time grid.
        store: Keep the step operators in the record (needed for
            `backward_propagate`).
        step_ops: Precomputed step operators for this generator, e.g. shared
            between trajectories with the same generator.
    """
    g = traj.generator
    _check_shapes(g, controls, grid)
    if step_ops is None:
        step_ops = step_operators(g, controls, grid)
    elif step_ops.shape != (grid.nt, g.dim, g.dim):
        raise ValueError(f"step_ops has shape {step_ops.shape}, expected {(grid.nt, g.dim, g.dim)}")
    states = np.empty((grid.nt + 1, g.dim), dtype=np.complex128)
    states[0] = traj.initial_state
    for n in range(grid.nt):
        states[n + 1] = step_ops[n] @ states[n]
    return PropagationRecord(states, step_ops if store else None)


def backward_propagate(chi_T: ArrayLike, record: PropagationRecord) -> NDArray[np.complex128]:
    """Propagate a boundary state backward with the adjoint step operators.

    Returns an ``(NT + 1, N)`` array with ``chi[NT] = chi_T`` and
    ``chi[n] = U_n^+ chi[n + 1]``.
    """
    if record.step_operators is None:
        raise ValueError("record has no cached step operators; forward-propagate with store=True")
    U = record.step_operators
    nt = U.shape[0]
    chi_T = np.asarray(chi_T, dtype=np.complex128)
    if chi_T.shape != (U.shape[-1],):
        raise ValueError(f"chi has shape {chi_T.shape}, step operators act on dimension {U.shape[-1]}")
    chis = np.empty((nt + 1, chi_T.size), dtype=np.complex128)
    chis[nt] = chi_T
    for n in range(nt - 1, -1, -1):
        chis[n] = U[n].conj().T @ chis[n + 1]
    return chis
