"""Pair-generation dynamics with two-photon absorption (TPA).

Hamiltonian (hbar = 1 code units):

    H = Omega (a' b' + a b),        a'/b' = creation operators

and the density-matrix equation of motion in the moving-frame coordinate xi

    drho/dxi = i [rho, H]
             + (gamma_a/2) (2 a^2 rho a'^2 - a'^2 a^2 rho - rho a'^2 a^2)
             + (gamma_b/2) (2 b^2 rho b'^2 - b'^2 b^2 rho - rho b'^2 b^2).

Omega and the TPA coefficients gamma_a, gamma_b carry units of inverse xi
(GHz when xi is in ns).  TPA removes photons two at a time; one-photon
(linear) loss is taken as negligible, so no single-photon jump operators are
built in.  `extra_jumps` is the hook for additional Lindblad channels and
ships empty.

The right-hand side is evaluated mode-by-mode on the (n_a, n_b, m_a, m_b)
tensor view of rho, which costs O(dim^2 * mode_dim) instead of the O(dim^3)
of full matrix products; `liouvillian_matrix` provides the independent
superoperator construction used to cross-check it.
"""

from __future__ import annotations

import math

import numpy as np

from .fock import (
    DensityMatrix,
    Operator,
    SpaceMismatchError,
    TwoModeSpace,
    ladder,
)

# Rows of the superoperator matrix are capped so the dense Liouvillian and
# its exponential stay cheap; this covers every oracle comparison space.
LIOUVILLIAN_MAX_ROWS = 10_000


def pair_hamiltonian(space: TwoModeSpace, omega: float) -> Operator:
    """H = Omega (a' b' + a b); couples |n_a, n_b> only to |n_a +- 1, n_b +- 1>."""
    if not (math.isfinite(omega) and omega >= 0):
        raise ValueError(f"omega must be finite and >= 0, got {omega}")
    a = ladder(space.dim_a)
    b = ladder(space.dim_b)
    down = np.kron(a, b)
    return Operator(space, omega * (down.conj().T + down))


def _left_a(x, r4):
    """(X (x) 1) r, contracting the signal ket axis."""
    da = x.shape[0]
    return (x @ r4.reshape(da, -1)).reshape(r4.shape)


def _left_b(x, r4):
    """(1 (x) X) r, contracting the idler ket axis."""
    da, db = r4.shape[0], r4.shape[1]
    return np.matmul(x, r4.reshape(da, db, -1)).reshape(r4.shape)


def _right_a(x_t, r4):
    """r (X (x) 1); x_t must be the transpose of X, contiguous."""
    da, db = r4.shape[2], r4.shape[3]
    return np.matmul(x_t, r4.reshape(-1, da, db)).reshape(r4.shape)


def _right_b(x, r4):
    """r (1 (x) X)."""
    db = x.shape[0]
    return (r4.reshape(-1, db) @ x).reshape(r4.shape)


class ZenoModel:
    """Physical parameters Omega, gamma_a, gamma_b plus cached operators.

    Immutable after construction; `rhs` is a pure function of its argument,
    so instances are safe to share across threads and worker processes.
    """

    def __init__(self, omega, gamma_a, gamma_b, space: TwoModeSpace,
                 extra_jumps=()):
        for name, val in (("omega", omega), ("gamma_a", gamma_a),
                          ("gamma_b", gamma_b)):
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {val}")
        self.omega = float(omega)
        self.gamma_a = float(gamma_a)
        self.gamma_b = float(gamma_b)
        self.space = space

        da, db = space.dim_a, space.dim_b
        a = ladder(da)
        b = ladder(db)
        self._a, self._ad = a, a.conj().T.copy()
        self._b, self._bd = b, b.conj().T.copy()
        self._a2 = a @ a
        self._b2 = b @ b
        self._a2d = self._a2.conj().T.copy()
        self._b2d = self._b2.conj().T.copy()
        # contiguous transposes for the right-multiplication kernels
        self._aT = np.ascontiguousarray(self._a.T)
        self._adT = np.ascontiguousarray(self._ad.T)
        self._a2dT = np.ascontiguousarray(self._a2d.T)
        # n(n-1) spectra of the TPA number operators a'^2 a^2, b'^2 b^2
        self._na2 = (np.arange(da) * (np.arange(da) - 1)).astype(float)
        self._nb2 = (np.arange(db) * (np.arange(db) - 1)).astype(float)

        self.extra_jumps = tuple(
            (float(rate), np.asarray(op.matrix if isinstance(op, Operator) else op,
                                     dtype=complex))
            for rate, op in extra_jumps
        )
        for _, mat in self.extra_jumps:
            if mat.shape != (space.dim, space.dim):
                raise SpaceMismatchError("extra jump operator shape mismatch")

        # full-space cached operators (contract surface / debugging)
        eye_b = np.eye(db)
        eye_a = np.eye(da)
        self.hamiltonian = pair_hamiltonian(space, self.omega)
        self.jump_a = Operator(space, np.kron(self._a2, eye_b))
        self.jump_b = Operator(space, np.kron(eye_a, self._b2))
        self.tpa_number_a = Operator(space, np.kron(self._a2d @ self._a2, eye_b))
        self.tpa_number_b = Operator(space, np.kron(eye_a, self._b2d @ self._b2))

    @property
    def gamma(self) -> float:
        """Composite TPA strength gamma_a + gamma_b."""
        return self.gamma_a + self.gamma_b

    def jump_operators(self):
        """(rate, full-space matrix) pairs of every active Lindblad channel."""
        ops = []
        if self.gamma_a > 0:
            ops.append((self.gamma_a, self.jump_a.matrix))
        if self.gamma_b > 0:
            ops.append((self.gamma_b, self.jump_b.matrix))
        ops.extend(self.extra_jumps)
        return ops

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """drho/dxi for a raw (dim, dim) complex matrix."""
        da, db = self.space.dim_a, self.space.dim_b
        rho = np.ascontiguousarray(rho, dtype=complex)
        r4 = rho.reshape(da, db, da, db)
        out = np.zeros_like(r4)

        if self.omega != 0.0:
            h_rho = _left_b(self._bd, _left_a(self._ad, r4))
            h_rho += _left_b(self._b, _left_a(self._a, r4))
            rho_h = _right_b(self._bd, _right_a(self._adT, r4))
            rho_h += _right_b(self._b, _right_a(self._aT, r4))
            out += (1j * self.omega) * (rho_h - h_rho)

        if self.gamma_a > 0.0:
            out += self.gamma_a * _right_a(self._a2dT, _left_a(self._a2, r4))
        if self.gamma_b > 0.0:
            out += self.gamma_b * _right_b(self._b2d, _left_b(self._b2, r4))
        if self.gamma_a > 0.0 or self.gamma_b > 0.0:
            decay = 0.5 * (self.gamma_a * self._na2[:, None]
                           + self.gamma_b * self._nb2[None, :])
            out -= decay[:, :, None, None] * r4
            out -= decay[None, None, :, :] * r4

        flat = out.reshape(self.space.dim, self.space.dim)
        for rate, mat in self.extra_jumps:
            ld = mat.conj().T
            num = ld @ mat
            flat += rate * (mat @ rho @ ld - 0.5 * (num @ rho + rho @ num))
        return flat


def lindblad_rhs(model: ZenoModel, rho) -> np.ndarray:
    """drho/dxi; traceless, and Hermitian whenever rho is Hermitian."""
    if isinstance(rho, DensityMatrix):
        if rho.space != model.space:
            raise SpaceMismatchError("state space does not match model space")
        rho = rho.matrix
    else:
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (model.space.dim, model.space.dim):
            raise SpaceMismatchError(
                f"state shape {rho.shape} does not match model dim {model.space.dim}"
            )
    return model.rhs(rho)


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Column-stacking vec(rho) used by the superoperator convention."""
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvectorize(vec: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(vec, dtype=complex).reshape(dim, dim, order="F")


def liouvillian_matrix(model: ZenoModel, max_rows: int = LIOUVILLIAN_MAX_ROWS) -> np.ndarray:
    """Dense superoperator M with vec(drho/dxi) = M vec(rho), column-stacking.

    Built from Kronecker identities (vec(A rho B) = (B^T (x) A) vec(rho)),
    i.e. independently of the tensor kernels in `ZenoModel.rhs`, so the two
    constructions cross-check each other.
    """
    d = model.space.dim
    if d * d > max_rows:
        raise ValueError(
            f"superoperator would have {d * d} rows, over the {max_rows} guard"
        )
    eye = np.eye(d)
    h = model.hamiltonian.matrix
    m = 1j * (np.kron(h.T, eye) - np.kron(eye, h))
    for rate, lop in model.jump_operators():
        num = lop.conj().T @ lop
        m += rate * (np.kron(lop.conj(), lop)
                     - 0.5 * np.kron(eye, num)
                     - 0.5 * np.kron(num.T, eye))
    return m
