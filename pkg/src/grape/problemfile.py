"""JSON problem and matrix files.

A matrix file is ``{"rows": R, "cols": C, "data": [[re, im], ...]}`` with
the data in row-major order; a state is a matrix with ``cols == 1``.
Paths inside a problem file are relative to the problem file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import (
    ControlSet,
    CouplingTerm,
    Generator,
    TimeGrid,
    Trajectory,
    linear_coupling,
    quadratic_coupling,
)
from .engine import ControlProblem
from .functionals import FunctionalKind, FunctionalSpec
from .optimizer import OptimizerOptions

__all__ = [
    "ProblemFileError",
    "LoadedProblem",
    "read_matrix",
    "write_matrix",
    "load_problem",
]

COUPLINGS = {"linear": linear_coupling, "quadratic": quadratic_coupling}
OPTIMIZER_KEYS = ("method", "alpha", "memory", "max_iter", "j_t_tol")


class ProblemFileError(ValueError):
    """Invalid problem or matrix file; the message starts with the offending key or path."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _parse_matrix(doc: Any, where: str) -> NDArray[np.complex128]:
    if not isinstance(doc, dict):
        raise ProblemFileError(where, "matrix file must be a JSON object")
    for key in ("rows", "cols", "data"):
        if key not in doc:
            raise ProblemFileError(where, f"missing key {key!r}")
    rows, cols, data = doc["rows"], doc["cols"], doc["data"]
    if not (isinstance(rows, int) and isinstance(cols, int) and rows >= 1 and cols >= 1):
        raise ProblemFileError(where, f"rows and cols must be positive integers, got {rows!r}, {cols!r}")
    if not isinstance(data, list) or len(data) != rows * cols:
        n = len(data) if isinstance(data, list) else type(data).__name__
        raise ProblemFileError(where, f"data must hold rows*cols = {rows * cols} entries, got {n}")
    out = np.empty(rows * cols, dtype=np.complex128)
    for i, entry in enumerate(data):
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry)
            or not all(math.isfinite(v) for v in entry)
        ):
            raise ProblemFileError(where, f"data[{i}] must be a finite [re, im] pair, got {entry!r}")
        out[i] = complex(entry[0], entry[1])
    return out.reshape(rows, cols)


def read_matrix(path: str | Path) -> NDArray[np.complex128]:
    """Read a matrix file into an ``(R, C)`` complex array."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ProblemFileError(str(path), f"cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ProblemFileError(str(path), f"invalid JSON ({exc})") from None
    return _parse_matrix(doc, str(path))


def write_matrix(path: str | Path, matrix: ArrayLike) -> None:
    """Write a matrix (or a vector, as a single column) to a matrix file."""
    m = np.asarray(matrix, dtype=np.complex128)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"expected a vector or matrix, got shape {m.shape}")
    data = [[float(z.real), float(z.imag)] for z in m.reshape(-1)]
    doc = {"rows": m.shape[0], "cols": m.shape[1], "data": data}
    Path(path).write_text(json.dumps(doc) + "\n")


@dataclass
class LoadedProblem:
    problem: ControlProblem
    options: OptimizerOptions


def _get(obj: Any, key: str, where: str, types, default=...):
    if not isinstance(obj, dict):
        raise ProblemFileError(where, "expected a JSON object")
    if key not in obj:
        if default is ...:
            raise ProblemFileError(f"{where}.{key}" if where else key, "missing")
        return default
    value = obj[key]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ProblemFileError(f"{where}.{key}" if where else key, f"unexpected boolean {value!r}")
    if not isinstance(value, types):
        raise ProblemFileError(f"{where}.{key}" if where else key, f"unexpected value {value!r}")
    return value


class _Loader:
    def __init__(self, path: Path, seed: int | None):
        self.base = path.parent
        self.rng = np.random.default_rng(seed)
        self._matrices: dict[Path, NDArray] = {}
        self._generators: dict[tuple, Generator] = {}

    def matrix(self, ref: Any, where: str) -> NDArray[np.complex128]:
        if not isinstance(ref, str):
            raise ProblemFileError(where, f"expected a file path, got {ref!r}")
        path = (self.base / ref).resolve()
        if path not in self._matrices:
            if not path.is_file():
                raise ProblemFileError(where, f"file not found: {ref}")
            self._matrices[path] = read_matrix(path)
        return self._matrices[path]

    def state(self, ref: Any, where: str) -> NDArray[np.complex128]:
        m = self.matrix(ref, where)
        if m.shape[1] != 1:
            raise ProblemFileError(where, f"a state file needs cols = 1, got {m.shape[0]}x{m.shape[1]}")
        return m[:, 0]

    def operator(self, ref: Any, where: str) -> NDArray[np.complex128]:
        m = self.matrix(ref, where)
        if m.shape[0] != m.shape[1]:
            raise ProblemFileError(where, f"operator must be square, got {m.shape[0]}x{m.shape[1]}")
        return m

    def grid(self, doc: dict) -> TimeGrid:
        spec = _get(doc, "grid", "", dict)
        t_start = float(_get(spec, "t_start", "grid", (int, float)))
        t_stop = float(_get(spec, "t_stop", "grid", (int, float)))
        nt = _get(spec, "nt", "grid", int)
        if nt < 1:
            raise ProblemFileError("grid.nt", f"must be >= 1, got {nt}")
        if not t_stop > t_start:
            raise ProblemFileError("grid", f"t_stop ({t_stop}) must exceed t_start ({t_start})")
        return TimeGrid.uniform(t_start, t_stop, nt)

    def controls(self, doc: dict, nt: int) -> ControlSet:
        entries = _get(doc, "controls", "", list)
        names, columns = [], []
        for i, entry in enumerate(entries):
            where = f"controls[{i}]"
            name = _get(entry, "name", where, str)
            if name in names:
                raise ProblemFileError(f"{where}.name", f"duplicate control name {name!r}")
            kind = _get(entry, "initial", where, str)
            if kind == "constant":
                value = float(_get(entry, "value", where, (int, float)))
                column = np.full(nt, value)
            elif kind == "random":
                # uniform in [-value, value], seeded by --seed
                value = float(_get(entry, "value", where, (int, float)))
                column = self.rng.uniform(-value, value, nt)
            elif kind == "file":
                m = self.matrix(_get(entry, "value", where, str), f"{where}.value")
                if m.size != nt:
                    raise ProblemFileError(f"{where}.value", f"control file has {m.size} values, grid has nt = {nt}")
                if np.any(m.imag != 0):
                    raise ProblemFileError(f"{where}.value", "control values must be real")
                column = m.real.reshape(-1)
            else:
                raise ProblemFileError(f"{where}.initial", f"expected 'constant', 'file' or 'random', got {kind!r}")
            if not np.all(np.isfinite(column)):
                raise ProblemFileError(f"{where}.value", "non-finite control values")
            names.append(name)
            columns.append(column)
        if not names:
            raise ProblemFileError("controls", "at least one control is required")
        return ControlSet(np.stack(columns, axis=1), tuple(names))

    def trajectory(self, entry: Any, k: int, names: tuple[str, ...], need_target: bool) -> Trajectory:
        where = f"trajectories[{k}]"
        psi0 = self.state(_get(entry, "initial_state", where, str), f"{where}.initial_state")
        dim = psi0.size
        target = None
        if "target_state" in entry or need_target:
            target = self.state(_get(entry, "target_state", where, str), f"{where}.target_state")
            if target.size != dim:
                raise ProblemFileError(
                    f"{where}.target_state",
                    f"dimension {target.size} does not match initial_state dimension {dim}",
                )
        weight = float(_get(entry, "weight", where, (int, float), 1.0))
        if not weight > 0:
            raise ProblemFileError(f"{where}.weight", f"must be positive, got {weight}")
        drift_ref = _get(entry, "drift", where, str)
        drift = self.operator(drift_ref, f"{where}.drift")
        if drift.shape[0] != dim:
            raise ProblemFileError(
                f"{where}.drift", f"dimension {drift.shape[0]} does not match initial_state dimension {dim}"
            )
        term_specs = _get(entry, "terms", where, list)
        key = [drift_ref]
        terms: list[CouplingTerm] = []
        for m, tspec in enumerate(term_specs):
            twhere = f"{where}.terms[{m}]"
            op_ref = _get(tspec, "operator", twhere, str)
            op = self.operator(op_ref, f"{twhere}.operator")
            if op.shape[0] != dim:
                raise ProblemFileError(
                    f"{twhere}.operator", f"dimension {op.shape[0]} does not match initial_state dimension {dim}"
                )
            coupling = _get(tspec, "coupling", twhere, str, "linear")
            if coupling not in COUPLINGS:
                raise ProblemFileError(f"{twhere}.coupling", f"expected 'linear' or 'quadratic', got {coupling!r}")
            control = _get(tspec, "control", twhere, str)
            if control not in names:
                raise ProblemFileError(f"{twhere}.control", f"unknown control {control!r}")
            terms.append(COUPLINGS[coupling](op, names.index(control)))
            key.append((op_ref, coupling, control))
        cache_key = tuple(key)
        if cache_key not in self._generators:
            self._generators[cache_key] = Generator(drift, tuple(terms), len(names))
        g = self._generators[cache_key]
        try:
            return Trajectory(psi0, g, target, weight)
        except ValueError as exc:
            raise ProblemFileError(where, str(exc)) from None

    def functional(self, doc: dict) -> FunctionalSpec:
        spec = _get(doc, "functional", "", dict, {})
        kind = _get(spec, "kind", "functional", str, "ss")
        if kind not in ("re", "ss", "sm"):
            raise ProblemFileError("functional.kind", f"expected 're', 'ss' or 'sm', got {kind!r}")
        lambda_a = float(_get(spec, "lambda_a", "functional", (int, float), 0.0))
        if not lambda_a >= 0:
            raise ProblemFileError("functional.lambda_a", f"must be >= 0, got {lambda_a}")
        return FunctionalSpec(FunctionalKind(kind), lambda_a=lambda_a)

    def options(self, doc: dict) -> OptimizerOptions:
        spec = _get(doc, "optimizer", "", dict, {})
        kwargs = {}
        for key, types in zip(OPTIMIZER_KEYS, (str, (int, float), int, int, (int, float))):
            if key in spec:
                kwargs[key] = _get(spec, key, "optimizer", types)
        try:
            return OptimizerOptions(**kwargs)
        except ValueError as exc:
            raise ProblemFileError("optimizer", str(exc)) from None


def load_problem(path: str | Path, seed: int | None = None) -> LoadedProblem:
    """Parse and validate a problem file and everything it references.

    Raises:
        ProblemFileError: on any invalid input, naming the offending key.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ProblemFileError(str(path), f"cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ProblemFileError(str(path), f"invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ProblemFileError(str(path), "problem file must be a JSON object")

    loader = _Loader(path, seed)
    grid = loader.grid(doc)
    controls = loader.controls(doc, grid.nt)
    functional = loader.functional(doc)
    options = loader.options(doc)
    entries = _get(doc, "trajectories", "", list)
    if not entries:
        raise ProblemFileError("trajectories", "at least one trajectory is required")
    trajs = [loader.trajectory(e, k, controls.labels, functional.is_builtin) for k, e in enumerate(entries)]
    try:
        problem = ControlProblem(tuple(trajs), grid, functional, controls)
    except ValueError as exc:
        raise ProblemFileError("trajectories", str(exc)) from None
    return LoadedProblem(problem, options)
