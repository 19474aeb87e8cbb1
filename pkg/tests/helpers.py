"""Random operators and problems shared by the test modules."""

import numpy as np

from grape import (
    ControlProblem,
    ControlSet,
    FunctionalKind,
    FunctionalSpec,
    Generator,
    TimeGrid,
    Trajectory,
    linear_coupling,
    quadratic_coupling,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

BUILTIN_KINDS = (
    FunctionalKind.REAL_OVERLAP,
    FunctionalKind.SQUARE_MODULUS,
    FunctionalKind.SQUARE_MODULUS_OF_SUM,
)


def random_state(rng, n):
    psi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return psi / np.linalg.norm(psi)


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (a + a.conj().T) / 2


def random_nonhermitian(rng, n, scale=1.0):
    # Hermitian part plus a dissipative anti-Hermitian part
    decay = random_hermitian(rng, n)
    decay = decay @ decay.conj().T / n
    return random_hermitian(rng, n, scale) - 0.5j * scale * decay


def random_generator(rng, n, num_controls, hermitian=True, quadratic=False):
    make = random_hermitian if hermitian else random_nonhermitian
    terms = []
    for l in range(num_controls):
        coupling = quadratic_coupling if quadratic and rng.random() < 0.5 else linear_coupling
        terms.append(coupling(make(rng, n, 0.7), l))
    return Generator(make(rng, n), tuple(terms), num_controls)


def random_problem(
    rng,
    n=None,
    num_controls=None,
    nt=None,
    k=None,
    kind=None,
    hermitian=True,
    quadratic=False,
    lambda_a=0.0,
    t_final=None,
):
    n = n or int(rng.integers(2, 7))
    num_controls = num_controls or int(rng.integers(1, 4))
    nt = nt or int(rng.integers(1, 17))
    k = k or int(rng.integers(1, 4))
    kind = kind or BUILTIN_KINDS[int(rng.integers(3))]
    t_final = t_final or float(rng.uniform(0.5, 2.0))
    trajs = []
    for _ in range(k):
        g = random_generator(rng, n, num_controls, hermitian, quadratic)
        trajs.append(Trajectory(random_state(rng, n), g, random_state(rng, n), float(rng.uniform(0.5, 2))))
    controls = ControlSet(rng.uniform(-1, 1, (nt, num_controls)))
    return ControlProblem(
        tuple(trajs), TimeGrid.uniform(0, t_final, nt), FunctionalSpec(kind, lambda_a=lambda_a), controls
    )


def tls_transfer_problem(nt=20, t_final=1.0, eps0=1.0, detuning=0.0):
    g = Generator.linear(0.5 * detuning * SZ, [SX])
    traj = Trajectory([1, 0], g, [0, 1])
    return ControlProblem(
        (traj,), TimeGrid.uniform(0, t_final, nt), FunctionalSpec(), ControlSet(np.full(nt, eps0))
    )


def cnot_problem(nt=50, seed=0):
    """Two qubits with a fixed ZZ coupling and x/y drives on each qubit."""
    h0 = 0.5 * np.kron(SZ, SZ)
    drives = [np.kron(SX, ID2), np.kron(SY, ID2), np.kron(ID2, SX), np.kron(ID2, SY)]
    g = Generator.linear(h0, drives)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    trajs = tuple(Trajectory(np.eye(4)[j], g, cnot[:, j]) for j in range(4))
    rng = np.random.default_rng(seed)
    controls = ControlSet(0.2 * rng.standard_normal((nt, 4)), ("x1", "y1", "x2", "y2"))
    functional = FunctionalSpec(FunctionalKind.SQUARE_MODULUS_OF_SUM)
    return ControlProblem(trajs, TimeGrid.uniform(0, 2 * np.pi, nt), functional, controls)


def amplitude_damping_generator(gamma=0.3, omega=1.0):
    """Driven two-level system decaying |1> -> |0> at rate gamma (Liouville space)."""
    from grape import liouville_generator

    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    return liouville_generator(0.5 * omega * SZ, [SX], [np.sqrt(gamma) * lower])
