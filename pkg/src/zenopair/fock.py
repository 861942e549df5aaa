"""Truncated two-mode Fock spaces and dense bosonic operators on them.

The two modes are the signal and idler outputs of a photon-pair source.
Basis ordering is part of the public contract:

    index(n_a, n_b) = n_a * dim_b + n_b

i.e. the signal occupation n_a is the slow (row-major) axis.  All operators
are dense complex matrices in this basis.  Fock levels at and above the
per-mode cutoff are truncated hard (the annihilator simply has no column
feeding them); validity of the truncation is enforced downstream by a
boundary-population monitor, not by correction terms here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

SIGNAL = "signal"
IDLER = "idler"
MODES = (SIGNAL, IDLER)

# DensityMatrix invariant tolerances, shared with the integrator checks.
TRACE_TOL = 1e-7
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-8


class SpaceMismatchError(ValueError):
    """Operands were built on different TwoModeSpace instances."""


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class TwoModeSpace:
    """Tensor product of two truncated Fock ladders |0..dim_a-1> x |0..dim_b-1>.

    dim_a is the signal cutoff, dim_b the idler cutoff; both must be >= 2 so
    the space can hold at least vacuum plus one photon per mode.
    """

    dim_a: int
    dim_b: int

    def __post_init__(self):
        if self.dim_a < 2 or self.dim_b < 2:
            raise ValueError(
                f"mode cutoffs must be >= 2, got ({self.dim_a}, {self.dim_b})"
            )

    @property
    def dim(self) -> int:
        return self.dim_a * self.dim_b

    def index(self, n_a: int, n_b: int) -> int:
        """Flat basis index of |n_a, n_b>."""
        if not (0 <= n_a < self.dim_a and 0 <= n_b < self.dim_b):
            raise ValueError(f"occupation ({n_a}, {n_b}) outside cutoffs")
        return n_a * self.dim_b + n_b

    def mode_dim(self, mode) -> int:
        _check_mode(mode)
        return self.dim_a if mode == SIGNAL else self.dim_b


def make_space(dim_a: int, dim_b: int) -> TwoModeSpace:
    """Build a truncated two-mode space with the documented basis ordering."""
    return TwoModeSpace(int(dim_a), int(dim_b))


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex matrix acting on a TwoModeSpace (row-major basis order)."""

    space: TwoModeSpace
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.space.dim, self.space.dim):
            raise ValueError(
                f"matrix shape {mat.shape} does not match space dim {self.space.dim}"
            )
        object.__setattr__(self, "matrix", mat)

    def dagger(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T.copy())

    def __matmul__(self, other: "Operator") -> "Operator":
        return compose(self, other)


def ladder(dim: int) -> np.ndarray:
    """Single-mode annihilator: <n-1| a |n> = sqrt(n), hard-truncated at dim."""
    mat = np.zeros((dim, dim), dtype=complex)
    ns = np.arange(1, dim)
    mat[ns - 1, ns] = np.sqrt(ns)
    return mat


def _embed(space: TwoModeSpace, mat: np.ndarray, mode) -> np.ndarray:
    _check_mode(mode)
    if mode == SIGNAL:
        return np.kron(mat, np.eye(space.dim_b))
    return np.kron(np.eye(space.dim_a), mat)


def annihilation(space: TwoModeSpace, mode) -> Operator:
    """Annihilator of the selected mode, identity on the other mode."""
    return Operator(space, _embed(space, ladder(space.mode_dim(mode)), mode))


def creation(space: TwoModeSpace, mode) -> Operator:
    return adjoint(annihilation(space, mode))


def adjoint(op: Operator) -> Operator:
    """Conjugate transpose; involutive up to exact elementwise equality."""
    return op.dagger()


def compose(left: Operator, right: Operator) -> Operator:
    if left.space != right.space:
        raise SpaceMismatchError("cannot compose operators on different spaces")
    return Operator(left.space, left.matrix @ right.matrix)


def embed_number(space: TwoModeSpace, mode) -> Operator:
    """Diagonal number operator n of the selected mode."""
    dim = space.mode_dim(mode)
    return Operator(space, _embed(space, np.diag(np.arange(dim, dtype=complex)), mode))


def basis_vector(space: TwoModeSpace, n_a: int, n_b: int) -> np.ndarray:
    vec = np.zeros(space.dim, dtype=complex)
    vec[space.index(n_a, n_b)] = 1.0
    return vec


@dataclass(eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite state on a TwoModeSpace.

    The invariants are not enforced on construction (the integrator produces
    intermediate matrices that only approximately satisfy them); use the
    diagnostic methods, which the evolution loop checks at sample points.
    """

    space: TwoModeSpace
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.space.dim, self.space.dim):
            raise ValueError(
                f"matrix shape {mat.shape} does not match space dim {self.space.dim}"
            )
        self.matrix = mat

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def trace_deficit(self) -> float:
        return abs(np.trace(self.matrix) - 1.0)

    def hermiticity_deviation(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        sym = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(sym)[0])

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def symmetrized(self) -> "DensityMatrix":
        return DensityMatrix(self.space, 0.5 * (self.matrix + self.matrix.conj().T))

    def diagonal_populations(self) -> np.ndarray:
        """Real (dim_a, dim_b) grid of occupation-basis populations."""
        diag = np.diagonal(self.matrix).real
        return diag.reshape(self.space.dim_a, self.space.dim_b)

    def boundary_populations(self) -> tuple[float, float]:
        """Total population at the top retained Fock level, per mode."""
        pops = self.diagonal_populations()
        return float(pops[-1, :].sum()), float(pops[:, -1].sum())

    def odd_parity_population(self) -> float:
        """Total population of basis states with n_a - n_b odd."""
        pops = self.diagonal_populations()
        na = np.arange(self.space.dim_a)[:, None]
        nb = np.arange(self.space.dim_b)[None, :]
        return float(pops[(na - nb) % 2 == 1].sum())

    def signal_excess_population(self) -> float:
        """Total population of basis states with n_a > n_b."""
        pops = self.diagonal_populations()
        na = np.arange(self.space.dim_a)[:, None]
        nb = np.arange(self.space.dim_b)[None, :]
        return float(pops[na > nb].sum())


def vacuum_state(space: TwoModeSpace) -> DensityMatrix:
    """Rank-1 projector onto |0,0>; trace exactly 1."""
    mat = np.zeros((space.dim, space.dim), dtype=complex)
    mat[0, 0] = 1.0
    return DensityMatrix(space, mat)


def dump_operator_csv(op: Operator, path) -> None:
    """Debug dump of a dense operator: header `row,col,re,im`, zero-based."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "re", "im"])
        for i in range(op.space.dim):
            for j in range(op.space.dim):
                z = op.matrix[i, j]
                writer.writerow([i, j, repr(float(z.real)), repr(float(z.imag))])
