"""Adaptive propagation of the density matrix along xi.

The stepper is an embedded Dormand-Prince 5(4) pair with PI step-size
control, operating directly on the dense density matrix.  The trace is
never renormalized: trace drift is a diagnostic, not something to hide.
Hermiticity is enforced by symmetrization rho <- (rho + rho')/2 only at
sample points, with the pre-symmetrization deviation recorded.  Positivity
is checked by full eigendecomposition at sample points.

Failure modes are loud: `TruncationLeak` when population reaches the top
retained Fock levels (enlarge the cutoffs and retry, or use
`auto_truncate`), `NonPhysicalState` when trace/Hermiticity/positivity
drift past the DensityMatrix invariants, `StepFailure` on step-size
underflow.  Exceptions carry the partial trajectory accumulated so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import (
    HERMITICITY_TOL,
    POSITIVITY_TOL,
    TRACE_TOL,
    DensityMatrix,
    SpaceMismatchError,
    TwoModeSpace,
    make_space,
    vacuum_state,
)
from .model import ZenoModel, liouvillian_matrix, unvectorize, vectorize
from .observables import IDLER_MARGINAL, PairStatistics, check_convention, pair_distribution

__all__ = [
    "IntegratorOptions",
    "Trajectory",
    "TruncationLeak",
    "NonPhysicalState",
    "StepFailure",
    "CutoffCeiling",
    "evolve",
    "propagate_grid",
    "auto_truncate",
    "matrix_exponential_reference",
]


class IntegrationError(RuntimeError):
    """Base class for evolution failures; carries the partial trajectory."""

    def __init__(self, message, xi=None, partial=None):
        super().__init__(message)
        self.xi = xi
        self.partial = partial


class TruncationLeak(IntegrationError):
    """Boundary-level population exceeded the allowed tolerance.

    The caller should enlarge the violated cutoff(s) and rerun.
    """

    def __init__(self, xi, boundary_a, boundary_b, space, tolerance, partial=None):
        super().__init__(
            f"truncation leak at xi={xi:.6g}: boundary populations "
            f"(signal={boundary_a:.3e}, idler={boundary_b:.3e}) exceed "
            f"{tolerance:.1e} on {space.dim_a}x{space.dim_b}",
            xi=xi, partial=partial)
        self.boundary_a = boundary_a
        self.boundary_b = boundary_b
        self.space = space
        self.tolerance = tolerance


class NonPhysicalState(IntegrationError):
    """Trace, Hermiticity or positivity drifted beyond the state invariants.

    Usually means the integrator tolerances are too loose.
    """

    def __init__(self, xi, reason, value, partial=None):
        super().__init__(
            f"non-physical state at xi={xi:.6g}: {reason} = {value:.3e}",
            xi=xi, partial=partial)
        self.reason = reason
        self.value = value


class StepFailure(IntegrationError):
    """Step size underflowed while trying to meet the error tolerance."""


class CutoffCeiling(IntegrationError):
    """auto_truncate hit its cutoff ceiling while still leaking."""

    def __init__(self, dims, leak, partial=None):
        super().__init__(
            f"cutoff ceiling reached at dims {dims}; still leaking: {leak}",
            xi=leak.xi, partial=partial)
        self.dims = dims
        self.leak = leak


@dataclass
class IntegratorOptions:
    """Tolerances and monitoring cadence for `evolve`.

    boundary_tolerance is the maximum total population allowed in any Fock
    level >= cutoff-1 (per mode); None disables the leak monitor (useful
    when deliberately comparing truncated generators against the matrix
    exponential).  positivity_check_every = k runs the eigenvalue check at
    every k-th sample point (0 disables it).
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float | None = None
    sample_count: int = 33
    boundary_tolerance: float | None = 1e-8
    positivity_check_every: int = 1
    store_states: bool = True

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.sample_count < 2:
            raise ValueError("sample_count must be >= 2")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be > 0 or None")
        if self.boundary_tolerance is not None and not self.boundary_tolerance > 0:
            raise ValueError("boundary_tolerance must be > 0 or None")
        if self.positivity_check_every < 0:
            raise ValueError("positivity_check_every must be >= 0")


@dataclass
class Trajectory:
    """States, statistics and diagnostics sampled on a xi grid.

    The first grid point is xi = 0 with the initial state.  min_eigenvalue
    is NaN at sample points where the positivity check was skipped.
    """

    convention: str
    omega: float
    xi_grid: np.ndarray
    stats: list[PairStatistics]
    states: list[DensityMatrix] | None
    final_state: DensityMatrix
    trace_deficit: np.ndarray
    herm_deviation: np.ndarray
    min_eigenvalue: np.ndarray
    boundary_pop_a: np.ndarray
    boundary_pop_b: np.ndarray
    odd_parity_pop: np.ndarray
    signal_excess_pop: np.ndarray
    step_count: int
    rejected_steps: int
    rhs_evaluations: int

    @property
    def theta_grid(self) -> np.ndarray:
        return self.omega * self.xi_grid

    def p1(self) -> np.ndarray:
        return np.array([s.p1 for s in self.stats])

    def p_multi(self) -> np.ndarray:
        return np.array([s.p_multi for s in self.stats])

    def pn(self, n: int) -> np.ndarray:
        return np.array([s.p[n] if n < s.p.size else 0.0 for s in self.stats])

    def boundary_pop(self) -> np.ndarray:
        return np.maximum(self.boundary_pop_a, self.boundary_pop_b)


# Dormand-Prince 5(4) tableau; the last row is the FSAL stage.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
          187 / 2100, 1 / 40)
_DP_E = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0
_HMIN_FRACTION = 1e-14


def _error_norm(err, y0, y1, rel_tol, abs_tol):
    scale = abs_tol + rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def _initial_step(f, y0, f0, rel_tol, abs_tol, span):
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = float(np.sqrt(np.mean(np.abs(y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean(np.abs(f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(y0 + h0 * f0)
    d2 = float(np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


class _Recorder:
    def __init__(self, convention, omega, options, space):
        self.convention = convention
        self.omega = omega
        self.options = options
        self.space = space
        self.xi = []
        self.stats = []
        self.states = [] if options.store_states else None
        self.trace_deficit = []
        self.herm_dev = []
        self.min_eig = []
        self.bpop_a = []
        self.bpop_b = []
        self.odd_parity = []
        self.signal_excess = []
        self.last_state = None
        self.step_count = 0
        self.rejected = 0
        self.nfev = 0

    def build(self) -> Trajectory:
        return Trajectory(
            convention=self.convention,
            omega=self.omega,
            xi_grid=np.array(self.xi),
            stats=list(self.stats),
            states=list(self.states) if self.states is not None else None,
            final_state=self.last_state,
            trace_deficit=np.array(self.trace_deficit),
            herm_deviation=np.array(self.herm_dev),
            min_eigenvalue=np.array(self.min_eig),
            boundary_pop_a=np.array(self.bpop_a),
            boundary_pop_b=np.array(self.bpop_b),
            odd_parity_pop=np.array(self.odd_parity),
            signal_excess_pop=np.array(self.signal_excess),
            step_count=self.step_count,
            rejected_steps=self.rejected,
            rhs_evaluations=self.nfev,
        )

    def sample(self, index, xi, y):
        """Symmetrize, check physicality, record; returns the kept matrix."""
        opts = self.options
        herm_dev = float(np.max(np.abs(y - y.conj().T)))
        y = 0.5 * (y + y.conj().T)
        state = DensityMatrix(self.space, y)
        deficit = state.trace_deficit()
        pop_a, pop_b = state.boundary_populations()

        if herm_dev > HERMITICITY_TOL:
            raise NonPhysicalState(xi, "hermiticity deviation", herm_dev,
                                   partial=self.build())
        if deficit > TRACE_TOL:
            raise NonPhysicalState(xi, "trace deficit", deficit,
                                   partial=self.build())
        btol = opts.boundary_tolerance
        if btol is not None and (pop_a > btol or pop_b > btol):
            raise TruncationLeak(xi, pop_a, pop_b, self.space, btol,
                                 partial=self.build())
        min_eig = math.nan
        every = opts.positivity_check_every
        if every > 0 and (index % every == 0 or xi == self.xi_final):
            min_eig = state.min_eigenvalue()
            if min_eig < -POSITIVITY_TOL:
                raise NonPhysicalState(xi, "negative eigenvalue", min_eig,
                                       partial=self.build())

        self.xi.append(xi)
        self.stats.append(pair_distribution(state, self.convention))
        self.trace_deficit.append(deficit)
        self.herm_dev.append(herm_dev)
        self.min_eig.append(min_eig)
        self.bpop_a.append(pop_a)
        self.bpop_b.append(pop_b)
        self.odd_parity.append(state.odd_parity_population())
        self.signal_excess.append(state.signal_excess_population())
        if self.states is not None:
            self.states.append(DensityMatrix(self.space, y.copy()))
        self.last_state = DensityMatrix(self.space, y.copy())
        return y


def propagate_grid(model: ZenoModel, rho0: DensityMatrix, grid,
                   options: IntegratorOptions | None = None,
                   convention: str = IDLER_MARGINAL) -> Trajectory:
    """Integrate the master equation, sampling at the given xi grid.

    The grid must start at 0 and be strictly increasing; `evolve` is the
    uniform-grid front end.  Each sample point is hit exactly (the last
    step of a segment is clamped), so sampled values carry no interpolation
    error.
    """
    options = options or IntegratorOptions()
    convention = check_convention(convention)
    if rho0.space != model.space:
        raise SpaceMismatchError("initial state space does not match model")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must contain at least [0, xi_final]")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and be strictly increasing")

    rec = _Recorder(convention, model.omega, options, model.space)
    rec.xi_final = float(grid[-1])
    span = float(grid[-1])
    hmin = _HMIN_FRACTION * span

    y = np.array(rho0.matrix, dtype=complex)
    y = rec.sample(0, 0.0, y)

    f = model.rhs
    k1 = f(y)
    rec.nfev += 1
    h = _initial_step(f, y, k1, options.rel_tol, options.abs_tol, span)
    rec.nfev += 1
    if options.max_step is not None:
        h = min(h, options.max_step)
    err_prev = 1e-4
    just_rejected = False

    stages = [None] * 7
    for seg_index in range(grid.size - 1):
        x = float(grid[seg_index])
        x_end = float(grid[seg_index + 1])
        while x < x_end:
            h_use = h
            if options.max_step is not None:
                h_use = min(h_use, options.max_step)
            last = h_use >= x_end - x
            if last:
                h_use = x_end - x
            if h_use < hmin:
                raise StepFailure(
                    f"step size underflow (h={h_use:.3e}) at xi={x:.6g}",
                    xi=x, partial=rec.build())

            stages[0] = k1
            for i in range(1, 7):
                yi = y.copy()
                for j, aij in enumerate(_DP_A[i]):
                    if aij != 0.0:
                        yi += (h_use * aij) * stages[j]
                stages[i] = f(yi)
                rec.nfev += 1
            # stage 7 argument is the 5th-order solution itself (FSAL)
            y_new = y.copy()
            for i, bi in enumerate(_DP_B5):
                if bi != 0.0:
                    y_new += (h_use * bi) * stages[i]
            err = np.zeros_like(y)
            for i, ei in enumerate(_DP_E):
                if ei != 0.0:
                    err += (h_use * ei) * stages[i]
            err_norm = _error_norm(err, y, y_new, options.rel_tol, options.abs_tol)

            if err_norm <= 1.0:
                x = x_end if last else x + h_use
                y = y_new
                k1 = stages[6]
                rec.step_count += 1
                if err_norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = _SAFETY * err_norm ** (-_PI_ALPHA) * err_prev ** _PI_BETA
                    factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                if just_rejected:
                    factor = min(factor, 1.0)
                h = h_use * factor
                err_prev = max(err_norm, 1e-4)
                just_rejected = False
            else:
                rec.rejected += 1
                factor = max(_MIN_FACTOR, _SAFETY * err_norm ** (-_PI_ALPHA))
                h = h_use * min(factor, 1.0)
                just_rejected = True

        y = rec.sample(seg_index + 1, x_end, y)
        if seg_index + 1 < grid.size - 1:
            k1 = f(y)  # symmetrization touched y, refresh the FSAL stage
            rec.nfev += 1

    return rec.build()


def evolve(model: ZenoModel, rho0: DensityMatrix, xi_final: float,
           options: IntegratorOptions | None = None,
           convention: str = IDLER_MARGINAL) -> Trajectory:
    """Propagate rho0 to xi_final, sampling a uniform grid of sample_count points."""
    if not xi_final > 0:
        raise ValueError("xi_final must be > 0")
    options = options or IntegratorOptions()
    grid = np.linspace(0.0, float(xi_final), options.sample_count)
    return propagate_grid(model, rho0, grid, options, convention)


DEFAULT_INITIAL_DIMS = (8, 8)
DEFAULT_CUTOFF_CEILING = 64


def auto_truncate(omega, gamma_a, gamma_b, xi_final,
                  options: IntegratorOptions | None = None,
                  convention: str = IDLER_MARGINAL,
                  initial_dims=DEFAULT_INITIAL_DIMS,
                  ceiling: int = DEFAULT_CUTOFF_CEILING,
                  grid=None) -> tuple[TwoModeSpace, Trajectory]:
    """Evolve from vacuum, doubling any cutoff whose boundary level leaks.

    Starts at `initial_dims` and doubles the violated dimension(s) on each
    TruncationLeak until the run is leak-free, raising CutoffCeiling once a
    required dimension would exceed `ceiling`.  Returns the accepted space
    together with its trajectory.
    """
    options = options or IntegratorOptions()
    dims = tuple(int(d) for d in initial_dims)
    while True:
        space = make_space(*dims)
        model = ZenoModel(omega, gamma_a, gamma_b, space)
        try:
            if grid is not None:
                traj = propagate_grid(model, vacuum_state(space), grid,
                                      options, convention)
            else:
                traj = evolve(model, vacuum_state(space), xi_final,
                              options, convention)
        except TruncationLeak as leak:
            tol = leak.tolerance
            grow_a = leak.boundary_a > tol
            grow_b = leak.boundary_b > tol
            if not (grow_a or grow_b):
                grow_a = grow_b = True
            new_dims = (dims[0] * 2 if grow_a else dims[0],
                        dims[1] * 2 if grow_b else dims[1])
            if max(new_dims) > ceiling:
                raise CutoffCeiling(dims, leak, partial=leak.partial) from leak
            dims = new_dims
            continue
        return space, traj


def matrix_exponential_reference(model: ZenoModel, rho0: DensityMatrix,
                                 xi: float) -> DensityMatrix:
    """exp(xi * M) applied to vec(rho0): the scaling-and-squaring oracle.

    Independent of the adaptive stepper (different discretization, different
    code path); intended for tests and `check` runs only.
    """
    from scipy.linalg import expm

    if rho0.space != model.space:
        raise SpaceMismatchError("initial state space does not match model")
    m = liouvillian_matrix(model)
    vec = expm(float(xi) * m) @ vectorize(rho0.matrix)
    return DensityMatrix(model.space, unvectorize(vec, model.space.dim))
