"""Final-time functionals, their boundary states, and amplitude running costs.

All built-in functionals are built on the overlaps
``tau_k = <target_k | psi_k(T)>``. The boundary ("chi") states are defined as
``chi_k = -dJ_T / d<psi_k(T)|``, scaled so that the gradient of J_T with
respect to a control value is ``-2 Re sum_k <chi_k(t_{n+1})| dU_n |psi_k(t_n)>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import ControlSet, TimeGrid

__all__ = [
    "FunctionalKind",
    "FunctionalSpec",
    "tau_overlaps",
    "evaluate_j_t",
    "chi_states",
    "chi_numeric",
    "running_cost",
]

CustomFunctional = Callable[[Sequence[NDArray], Sequence[NDArray | None], NDArray], float]


class FunctionalKind(enum.Enum):
    REAL_OVERLAP = "re"
    SQUARE_MODULUS = "ss"
    SQUARE_MODULUS_OF_SUM = "sm"
    CUSTOM = "custom"


@dataclass(frozen=True)
class FunctionalSpec:
    """Which J_T to minimize, plus the weight of the amplitude running cost.

    Args:
        kind: One of the built-in kinds, or CUSTOM.
        custom_j: For CUSTOM, a function ``j(finals, targets, weights)``
            returning a real number. Its boundary states are obtained
            numerically with `chi_numeric`.
        lambda_a: Weight of ``J_a = lambda_a * sum_{n,l} eps_nl**2 dt_n``.
    """

    kind: FunctionalKind = FunctionalKind.SQUARE_MODULUS
    custom_j: CustomFunctional | None = None
    lambda_a: float = 0.0

    def __post_init__(self):
        kind = FunctionalKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is FunctionalKind.CUSTOM and self.custom_j is None:
            raise ValueError("a CUSTOM functional needs custom_j")
        if kind is not FunctionalKind.CUSTOM and self.custom_j is not None:
            raise ValueError(f"custom_j given for built-in functional {kind.name}")
        if not (np.isfinite(self.lambda_a) and self.lambda_a >= 0):
            raise ValueError(f"lambda_a must be >= 0, got {self.lambda_a!r}")

    @property
    def is_builtin(self) -> bool:
        return self.kind is not FunctionalKind.CUSTOM


def tau_overlaps(finals: Sequence[ArrayLike], targets: Sequence[ArrayLike]) -> NDArray[np.complex128]:
    """tau_k = <target_k | final_k> for each trajectory."""
    if len(finals) != len(targets):
        raise ValueError(f"{len(finals)} final states but {len(targets)} targets")
    taus = np.empty(len(finals), dtype=np.complex128)
    for k, (psi, tgt) in enumerate(zip(finals, targets)):
        if tgt is None:
            raise ValueError(f"trajectory {k} has no target state")
        psi = np.asarray(psi)
        tgt = np.asarray(tgt)
        if psi.shape != tgt.shape:
            raise ValueError(f"trajectory {k}: final state shape {psi.shape} != target shape {tgt.shape}")
        taus[k] = np.vdot(tgt, psi)
    return taus


def _j_from_taus(kind: FunctionalKind, taus: NDArray, weights: NDArray) -> float:
    if kind is FunctionalKind.REAL_OVERLAP:
        return float(1.0 - np.sum(weights * taus.real))
    if kind is FunctionalKind.SQUARE_MODULUS:
        return float(1.0 - np.sum(weights * np.abs(taus) ** 2))
    if kind is FunctionalKind.SQUARE_MODULUS_OF_SUM:
        return float(1.0 - abs(np.sum(weights * taus)) ** 2)
    raise ValueError(f"not a built-in functional: {kind}")


def evaluate_j_t(
    spec: FunctionalSpec,
    finals: Sequence[ArrayLike],
    targets: Sequence[ArrayLike | None],
    weights: ArrayLike,
) -> float:
    """Value of the final-time functional for the given final states."""
    weights = np.asarray(weights, dtype=np.float64)
    if spec.kind is FunctionalKind.CUSTOM:
        return float(spec.custom_j(list(finals), list(targets), weights))
    return _j_from_taus(spec.kind, tau_overlaps(finals, targets), weights)


def chi_states(
    spec: FunctionalSpec,
    finals: Sequence[ArrayLike],
    targets: Sequence[ArrayLike],
    weights: ArrayLike,
) -> list[NDArray[np.complex128]]:
    """Analytic boundary states -dJ_T/d<psi_k(T)| for the built-in functionals."""
    if spec.kind is FunctionalKind.CUSTOM:
        raise ValueError("no analytic chi states for a CUSTOM functional; use chi_numeric")
    weights = np.asarray(weights, dtype=np.float64)
    taus = tau_overlaps(finals, targets)
    targets = [np.asarray(t, dtype=np.complex128) for t in targets]
    if spec.kind is FunctionalKind.REAL_OVERLAP:
        return [0.5 * w * tgt for w, tgt in zip(weights, targets)]
    if spec.kind is FunctionalKind.SQUARE_MODULUS:
        return [w * tau * tgt for w, tau, tgt in zip(weights, taus, targets)]
    total = np.sum(weights * taus)
    return [w * total * tgt for w, tgt in zip(weights, targets)]


def chi_numeric(
    j: CustomFunctional,
    finals: Sequence[ArrayLike],
    targets: Sequence[ArrayLike | None],
    weights: ArrayLike,
) -> list[NDArray[np.complex128]]:
    """Boundary states of an arbitrary functional by central finite differences.

    Component i of chi_k is ``-(dJ/dRe psi_ki + i dJ/dIm psi_ki) / 2``, the
    Wirtinger derivative with respect to the bra.
    """
    finals = [np.array(psi, dtype=np.complex128) for psi in finals]
    targets = list(targets)
    weights = np.asarray(weights, dtype=np.float64)

    def value(states):
        v = float(j(states, targets, weights))
        if not np.isfinite(v):
            raise ValueError("functional is non-finite under perturbation")
        return v

    chis = []
    for k, psi in enumerate(finals):
        h = 1e-6 * (1.0 + np.max(np.abs(psi)))
        chi = np.empty_like(psi)
        for i in range(psi.size):
            parts = []
            for delta in (h, 1j * h):
                perturbed = list(finals)
                up = psi.copy()
                up[i] += delta
                perturbed[k] = up
                j_up = value(perturbed)
                down = psi.copy()
                down[i] -= delta
                perturbed[k] = down
                j_down = value(perturbed)
                parts.append((j_up - j_down) / (2 * h))
            chi[i] = -0.5 * (parts[0] + 1j * parts[1])
        chis.append(chi)
    return chis


def running_cost(
    controls: ControlSet, grid: TimeGrid, lambda_a: float
) -> tuple[float, NDArray[np.float64]]:
    """``J_a = lambda_a sum eps_nl**2 dt_n`` and its gradient with respect to eps."""
    if lambda_a < 0:
        raise ValueError(f"lambda_a must be >= 0, got {lambda_a!r}")
    dt = grid.dt[:, None]
    eps = controls.values
    return float(lambda_a * np.sum(eps**2 * dt)), 2.0 * lambda_a * eps * dt
