"""Domain types for piecewise-constant control problems.

States are plain complex numpy vectors and operators are dense complex
numpy matrices; the types here only add the structure GRAPE needs on top:
time grids, control values, generators with (possibly nonlinear) control
couplings, and trajectories.

Units follow the hbar = 1 convention, i.e. a state evolves as
``d|psi>/dt = -i H |psi>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "TimeGrid",
    "ControlSet",
    "CouplingTerm",
    "Generator",
    "Trajectory",
    "inner_product",
    "as_state",
    "as_operator",
    "linear_coupling",
    "quadratic_coupling",
    "commutator_superoperator",
    "dissipator_superoperator",
    "liouville_generator",
    "vectorize",
    "unvectorize",
]

AmplitudeFunc = Callable[[NDArray[np.float64]], float]
PartialsFunc = Callable[[NDArray[np.float64]], ArrayLike]

# control vectors used to validate user-supplied partials at construction
_CHECK_POINTS = (0.0, 0.37, -1.21, 2.53)
_PARTIALS_RTOL = 1e-6


def _frozen(array: NDArray) -> NDArray:
    array.setflags(write=False)
    return array


def as_state(psi: ArrayLike) -> NDArray[np.complex128]:
    """Return `psi` as a read-only complex vector."""
    vec = np.array(psi, dtype=np.complex128).reshape(-1)
    if vec.size < 1:
        raise ValueError("state must have at least one entry")
    if not np.all(np.isfinite(vec)):
        raise ValueError("state has non-finite entries")
    return _frozen(vec)


def as_operator(op: ArrayLike) -> NDArray[np.complex128]:
    """Return `op` as a read-only square complex matrix."""
    mat = np.array(op, dtype=np.complex128)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
        raise ValueError(f"operator must be a non-empty square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("operator has non-finite entries")
    return _frozen(mat)


def inner_product(a: ArrayLike, b: ArrayLike) -> complex:
    """Return <a|b>, conjugate-linear in `a`."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points t_0 < ... < t_NT.

    Controls live on the NT intervals, states on the NT + 1 points.
    """

    points: NDArray[np.float64]

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1)
        if points.size < 2:
            raise ValueError("time grid needs at least two points (one interval)")
        if not np.all(np.isfinite(points)):
            raise ValueError("time grid has non-finite points")
        if np.any(np.diff(points) <= 0):
            raise ValueError("time grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(points))

    @classmethod
    def uniform(cls, t_start: float, t_stop: float, nt: int) -> "TimeGrid":
        if nt < 1:
            raise ValueError("nt must be >= 1")
        return cls(np.linspace(t_start, t_stop, nt + 1))

    @property
    def nt(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> NDArray[np.float64]:
        return np.diff(self.points)

    @property
    def midpoints(self) -> NDArray[np.float64]:
        return 0.5 * (self.points[:-1] + self.points[1:])

    @property
    def t_final(self) -> float:
        return float(self.points[-1])


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Control amplitudes eps[n, l] on the intervals of a time grid.

    The flat vector seen by the optimizer is ``values.reshape(-1)``, i.e.
    index ``n * L + l``.
    """

    values: NDArray[np.float64]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError(f"controls must be an NT x L matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("controls have non-finite entries")
        labels = tuple(self.labels) or tuple(f"ctrl{l}" for l in range(values.shape[1]))
        if len(labels) != values.shape[1]:
            raise ValueError(f"{len(labels)} labels for {values.shape[1]} controls")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", labels)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def num_controls(self) -> int:
        return self.values.shape[1]

    def flatten(self) -> NDArray[np.float64]:
        return self.values.reshape(-1).copy()

    def with_values(self, flat_or_matrix: ArrayLike) -> "ControlSet":
        """New control set with the same labels and shape."""
        values = np.asarray(flat_or_matrix, dtype=np.float64).reshape(self.values.shape)
        return ControlSet(values, self.labels)


@dataclass(frozen=True, eq=False)
class CouplingTerm:
    """One ``a(eps) * H_m`` term of a generator.

    `amplitude` maps the full control vector of an interval to a real
    number; `partials` returns its gradient with respect to that vector.
    """

    operator: NDArray[np.complex128]
    amplitude: AmplitudeFunc
    partials: PartialsFunc
    name: str = ""


def linear_coupling(operator: ArrayLike, control: int) -> CouplingTerm:
    """Term ``eps_l * H``."""

    def amplitude(eps):
        return eps[control]

    def partials(eps):
        grad = np.zeros(len(eps))
        grad[control] = 1.0
        return grad

    return CouplingTerm(as_operator(operator), amplitude, partials, name=f"linear[{control}]")


def quadratic_coupling(operator: ArrayLike, control: int) -> CouplingTerm:
    """Term ``eps_l**2 * H``."""

    def amplitude(eps):
        return eps[control] ** 2

    def partials(eps):
        grad = np.zeros(len(eps))
        grad[control] = 2.0 * eps[control]
        return grad

    return CouplingTerm(as_operator(operator), amplitude, partials, name=f"quadratic[{control}]")


@dataclass(frozen=True, eq=False)
class Generator:
    """H(eps) = H_0 + sum_m a_m(eps) H_m for a control vector eps of length L.

    Args:
        drift: The control-independent operator H_0.
        terms: Control-coupled terms.
        num_controls: Length L of the control vector the amplitudes receive.
        check_partials: Validate each term's `partials` against central
            finite differences of its `amplitude` on a few fixed points.
    """

    drift: NDArray[np.complex128]
    terms: tuple[CouplingTerm, ...]
    num_controls: int
    check_partials: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        drift = as_operator(self.drift)
        terms = []
        for m, term in enumerate(self.terms):
            op = as_operator(term.operator)
            if op.shape != drift.shape:
                raise ValueError(
                    f"term {m} operator has shape {op.shape}, drift has shape {drift.shape}"
                )
            terms.append(CouplingTerm(op, term.amplitude, term.partials, term.name))
        if self.num_controls < 0:
            raise ValueError("num_controls must be >= 0")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "terms", tuple(terms))
        if self.check_partials:
            self._validate_partials()

    def _validate_partials(self):
        L = self.num_controls
        if L == 0:
            return
        for value in _CHECK_POINTS:
            # vary entries so distinct controls see distinct values
            eps = value + 0.1 * np.arange(L, dtype=np.float64)
            for m, term in enumerate(self.terms):
                analytic = self._partials(term, eps, m)
                for l in range(L):
                    h = 1e-5 * (1.0 + abs(eps[l]))
                    up = eps.copy()
                    down = eps.copy()
                    up[l] += h
                    down[l] -= h
                    fd = (float(term.amplitude(up)) - float(term.amplitude(down))) / (2 * h)
                    scale = max(abs(fd), abs(analytic[l]), 1.0)
                    if abs(fd - analytic[l]) > _PARTIALS_RTOL * scale:
                        raise ValueError(
                            f"term {m}: declared partial w.r.t. control {l} is "
                            f"{analytic[l]!r} at eps={eps.tolist()}, finite differences give {fd!r}"
                        )

    def _partials(self, term: CouplingTerm, eps: NDArray, m: int) -> NDArray[np.float64]:
        grad = np.asarray(term.partials(eps), dtype=np.float64).reshape(-1)
        if grad.size != self.num_controls:
            raise ValueError(f"term {m}: partials returned {grad.size} values, expected {self.num_controls}")
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"term {m}: partials are non-finite at eps={list(eps)}")
        return grad

    @classmethod
    def linear(cls, drift: ArrayLike, controls: Sequence[ArrayLike]) -> "Generator":
        """The common ``H_0 + sum_l eps_l H_l`` case."""
        terms = tuple(linear_coupling(op, l) for l, op in enumerate(controls))
        return cls(as_operator(drift), terms, len(terms))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    def _check_eps(self, eps: ArrayLike) -> NDArray[np.float64]:
        eps = np.asarray(eps, dtype=np.float64).reshape(-1)
        if eps.size != self.num_controls:
            raise ValueError(f"expected {self.num_controls} control values, got {eps.size}")
        if not np.all(np.isfinite(eps)):
            raise ValueError("control values must be finite")
        return eps

    def evaluate(self, eps: ArrayLike) -> NDArray[np.complex128]:
        """Return H(eps)."""
        eps = self._check_eps(eps)
        H = self.drift.copy()
        for m, term in enumerate(self.terms):
            a = float(term.amplitude(eps))
            if not np.isfinite(a):
                raise ValueError(f"term {m}: amplitude is non-finite at eps={eps.tolist()}")
            H += a * term.operator
        return H

    def control_derivative(self, eps: ArrayLike, l: int) -> NDArray[np.complex128]:
        """Return dH/d eps_l at `eps`."""
        eps = self._check_eps(eps)
        if not 0 <= l < self.num_controls:
            raise IndexError(f"control index {l} out of range for {self.num_controls} controls")
        mu = np.zeros_like(self.drift)
        for m, term in enumerate(self.terms):
            d = self._partials(term, eps, m)[l]
            if d != 0.0:
                mu += d * term.operator
        return mu

    def control_derivatives(self, eps: ArrayLike) -> list[NDArray[np.complex128]]:
        """Return [dH/d eps_l for l in range(L)]."""
        eps = self._check_eps(eps)
        mus = [np.zeros_like(self.drift) for _ in range(self.num_controls)]
        for m, term in enumerate(self.terms):
            d = self._partials(term, eps, m)
            for l in np.flatnonzero(d):
                mus[l] += d[l] * term.operator
        return mus

    def is_hermitian(self, atol: float = 1e-14) -> bool:
        """True if H_0 and every H_m are Hermitian (a closed system)."""
        ops = [self.drift] + [t.operator for t in self.terms]
        return all(np.allclose(op, op.conj().T, rtol=0, atol=atol) for op in ops)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A state |psi_k(0)> evolving under its own generator, with an optional target."""

    initial_state: NDArray[np.complex128]
    generator: Generator
    target_state: NDArray[np.complex128] | None = None
    weight: float = 1.0

    def __post_init__(self):
        psi = as_state(self.initial_state)
        if psi.size != self.generator.dim:
            raise ValueError(
                f"initial state has dimension {psi.size}, generator has dimension {self.generator.dim}"
            )
        object.__setattr__(self, "initial_state", psi)
        if self.target_state is not None:
            tgt = as_state(self.target_state)
            if tgt.size != psi.size:
                raise ValueError(
                    f"target state has dimension {tgt.size}, initial state has dimension {psi.size}"
                )
            object.__setattr__(self, "target_state", tgt)
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"trajectory weight must be positive, got {self.weight!r}")
        object.__setattr__(self, "weight", float(self.weight))


# Liouville-space helpers. Density matrices are vectorized column by column,
# so that vec(A X B) = (B^T kron A) vec(X).


def vectorize(rho: ArrayLike) -> NDArray[np.complex128]:
    return np.asarray(rho, dtype=np.complex128).reshape(-1, order="F")


def unvectorize(vec: ArrayLike) -> NDArray[np.complex128]:
    vec = np.asarray(vec, dtype=np.complex128)
    d = int(round(np.sqrt(vec.size)))
    if d * d != vec.size:
        raise ValueError(f"vector of length {vec.size} is not a vectorized square matrix")
    return vec.reshape((d, d), order="F")


def commutator_superoperator(H: ArrayLike) -> NDArray[np.complex128]:
    """Matrix of rho -> [H, rho] acting on vectorized rho."""
    H = np.asarray(H, dtype=np.complex128)
    eye = np.eye(H.shape[0])
    return np.kron(eye, H) - np.kron(H.T, eye)


def dissipator_superoperator(c_ops: Sequence[ArrayLike]) -> NDArray[np.complex128]:
    """Matrix of rho -> sum_j (A_j rho A_j^+ - 1/2 {A_j^+ A_j, rho})."""
    c_ops = [np.asarray(A, dtype=np.complex128) for A in c_ops]
    if not c_ops:
        raise ValueError("need at least one Lindblad operator")
    d = c_ops[0].shape[0]
    eye = np.eye(d)
    D = np.zeros((d * d, d * d), dtype=np.complex128)
    for A in c_ops:
        AdA = A.conj().T @ A
        D += np.kron(A.conj(), A) - 0.5 * (np.kron(eye, AdA) + np.kron(AdA.T, eye))
    return D


def liouville_generator(
    drift: ArrayLike,
    controls: Sequence[ArrayLike] = (),
    c_ops: Sequence[ArrayLike] = (),
) -> Generator:
    """Generator for the Lindblad equation written as d vec(rho)/dt = -i G vec(rho).

    With L the Liouvillian, G = i L: the Hamiltonian parts become commutator
    superoperators and the dissipator enters multiplied by i, so G is not
    Hermitian.
    """
    G0 = commutator_superoperator(drift)
    if c_ops:
        G0 = G0 + 1j * dissipator_superoperator(c_ops)
    return Generator.linear(G0, [commutator_superoperator(H) for H in controls])
