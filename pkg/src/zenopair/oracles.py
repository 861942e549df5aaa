"""Independent references for the master-equation solver.

Three oracles, each with a code path disjoint from the adaptive integrator:

* `tmsv_distribution`: the closed-form pair-number distribution of the
  two-mode squeezed vacuum, P_n = tanh^{2n}(r) / cosh^2(r), which is the
  exact gamma = 0 output of the pair Hamiltonian from vacuum with
  r = Omega * xi.
* `adiabatic_p1` / `adiabatic_p2`: the strong-blockade limit
  P1 ~ sin^2(Omega L), P2 ~ (2 Omega / gamma)^2 P1.  These are
  order-of-magnitude envelopes (the underlying adiabatic elimination is an
  approximation), not precision targets.
* `mc_evolve`: quantum-jump (Monte Carlo wavefunction) unraveling with
  effective generator H - (i/2)(gamma_a a'^2 a^2 + gamma_b b'^2 b^2) and
  jump operators sqrt(gamma_a) a^2, sqrt(gamma_b) b^2.  Jump times are
  located by fixed-step norm tracking with linear interpolation of the
  squared-norm threshold crossing.

Monte Carlo randomness comes from numpy's Philox counter-based generator:
trajectory k draws from Philox(key=seed).jumped(k), so results are
reproducible and independent of execution order; the algorithm name and
seed are recorded in the result metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import DensityMatrix, SpaceMismatchError, TwoModeSpace
from .model import ZenoModel
from .observables import (
    IDLER_MARGINAL,
    PairStatistics,
    check_convention,
    pair_probabilities,
)

RNG_ALGORITHM = "philox4x64(numpy.random.Philox), stream k = jumped(k)"


def tmsv_distribution(r: float, n_max: int) -> np.ndarray:
    """P_n for n = 0..n_max of a two-mode squeezed vacuum with squeeze r."""
    if r < 0:
        raise ValueError("squeeze parameter must be >= 0")
    t = math.tanh(r) ** 2
    p0 = 1.0 / math.cosh(r) ** 2
    return p0 * t ** np.arange(n_max + 1)


def tmsv_mean_pairs(r: float) -> float:
    return math.sinh(r) ** 2


def tmsv_p_multi(r: float) -> float:
    """sum_{n>=2} P_n = tanh^4(r) (geometric tail of the closed form)."""
    return math.tanh(r) ** 4


def adiabatic_p1(omega: float, length: float) -> float:
    """Rabi-limit single-pair probability sin^2(Omega L)."""
    return math.sin(omega * length) ** 2


def adiabatic_p2(omega: float, gamma: float, length: float) -> float:
    """Blockade-limit double-pair envelope (2 Omega / gamma)^2 P1."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0 for the adiabatic double-pair formula")
    return (2.0 * omega / gamma) ** 2 * adiabatic_p1(omega, length)


class McConfigError(ValueError):
    """Monte Carlo step configuration rejected (norm decay too fast)."""


@dataclass
class McOptions:
    """Knobs for the quantum-jump ensemble.

    `step` is the fixed norm-tracking step in xi units; a step over which
    any trajectory's squared norm decays by more than max_norm_decay is
    reported as a configuration error rather than silently tolerated.
    """

    trajectory_count: int = 20_000
    rng_seed: int = 0
    step: float = 2e-3
    space: TwoModeSpace | None = None
    sample_count: int = 2
    max_norm_decay: float = 0.10

    def __post_init__(self):
        if self.trajectory_count < 1:
            raise ValueError("trajectory_count must be >= 1")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.sample_count < 2:
            raise ValueError("sample_count must be >= 2")


@dataclass
class McSample:
    """Ensemble statistics at one xi sample point."""

    xi: float
    p: np.ndarray
    p_stderr: np.ndarray
    p1: float
    p1_stderr: float
    p_multi: float
    p_multi_stderr: float
    leaked: float
    boundary_weight: float
    trace_deficit: float
    min_eigenvalue: float
    boundary_pop_a: float
    boundary_pop_b: float


@dataclass
class McResult:
    convention: str
    omega: float
    xi_grid: np.ndarray
    samples: list[McSample]
    stats: PairStatistics
    n_traj: int
    rng_algorithm: str
    rng_seed: int
    step: float
    jump_events: list[tuple[int, float, str]]
    jump_counts: dict

    @property
    def final(self) -> McSample:
        return self.samples[-1]


def _propagator_pieces(model: ZenoModel):
    """Eigendecomposition of the non-Hermitian generator -i H_eff.

    Returns (w, v, v_inv) with H_eff = H - (i/2) sum gamma L'L, so the
    exact no-jump propagator over h is v @ diag(exp(-i w h)) @ v_inv.
    Falls back to scipy's expm if the eigenbasis is badly conditioned
    (possible at exceptional points of the dissipative ladder).
    """
    heff = model.hamiltonian.matrix.astype(complex).copy()
    heff -= 0.5j * (model.gamma_a * model.tpa_number_a.matrix
                    + model.gamma_b * model.tpa_number_b.matrix)
    w, v = np.linalg.eig(heff)
    v_inv = np.linalg.inv(v)
    # reconstruction quality check on a representative step
    from scipy.linalg import expm

    h_ref = 1e-3
    u_eig = (v * np.exp(-1j * w * h_ref)) @ v_inv
    u_ref = expm(-1j * heff * h_ref)
    scale = max(1.0, float(np.max(np.abs(u_ref))))
    if float(np.max(np.abs(u_eig - u_ref))) > 1e-10 * scale:
        return heff, None, None
    return w, v, v_inv


def _make_propagate(model: ZenoModel):
    pieces = _propagator_pieces(model)
    if pieces[1] is None:
        heff = pieces[0]
        from scipy.linalg import expm

        def prop_matrix(h):
            return expm(-1j * heff * h)

        def prop_vector(psi, h):
            return expm(-1j * heff * h) @ psi
    else:
        w, v, v_inv = pieces

        def prop_matrix(h):
            return (v * np.exp(-1j * w * h)) @ v_inv

        def prop_vector(psi, h):
            return v @ (np.exp(-1j * w * h) * (v_inv @ psi))

    return prop_matrix, prop_vector


def _fsum_mean(values_2d: np.ndarray) -> np.ndarray:
    """Column means via compensated summation (order-independent)."""
    n = values_2d.shape[0]
    return np.array([math.fsum(values_2d[:, j]) / n
                     for j in range(values_2d.shape[1])])


def _binomial_stderr(p_mean: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.clip(p_mean * (1.0 - p_mean), 0.0, None) / n)


def mc_evolve(model: ZenoModel, xi_final: float,
              options: McOptions | None = None,
              convention: str = IDLER_MARGINAL) -> McResult:
    """Quantum-jump ensemble estimate of the pair statistics at xi_final.

    Deterministic given rng_seed.  Ensemble means are reduced with
    compensated summation in canonical trajectory order; standard errors
    are binomial, sqrt(p(1-p)/K).
    """
    options = options or McOptions()
    convention = check_convention(convention)
    if options.space is not None and options.space != model.space:
        raise SpaceMismatchError("McOptions.space does not match model space")
    if not xi_final > 0:
        raise ValueError("xi_final must be > 0")

    space = model.space
    da, db = space.dim_a, space.dim_b
    d = space.dim
    n_traj = options.trajectory_count

    prop_matrix, prop_vector = _make_propagate(model)

    jump_channels = []
    if model.gamma_a > 0:
        jump_channels.append((model.gamma_a, model.jump_a.matrix, "signal"))
    if model.gamma_b > 0:
        jump_channels.append((model.gamma_b, model.jump_b.matrix, "idler"))

    base = np.random.Philox(key=options.rng_seed)
    gens = [np.random.Generator(base.jumped(k)) for k in range(n_traj)]

    psi = np.zeros((n_traj, d), dtype=complex)
    psi[:, 0] = 1.0
    norms2 = np.ones(n_traj)
    thresholds = np.array([g.random() for g in gens]) if jump_channels \
        else np.zeros(n_traj)

    grid = np.linspace(0.0, float(xi_final), options.sample_count)
    samples = []
    jump_events = []
    jump_counts = {name: 0 for _, _, name in jump_channels}

    def take_sample(xi):
        scale = 1.0 / np.sqrt(norms2)
        psi_n = psi * scale[:, None]
        pops = np.abs(psi_n.reshape(n_traj, da, db)) ** 2
        p, leaked, boundary = pair_probabilities(pops, convention)
        p_mean = _fsum_mean(p)
        p_se = _binomial_stderr(p_mean, n_traj)
        p1 = float(p_mean[1]) if p_mean.size > 1 else 0.0
        p1_se = float(p_se[1]) if p_se.size > 1 else 0.0
        p_multi_traj = p[:, 2:].sum(axis=1)
        p_multi = math.fsum(p_multi_traj) / n_traj
        p_multi_se = float(_binomial_stderr(np.array([p_multi]), n_traj)[0])
        # ensemble density matrix for the physicality diagnostics
        rho_ens = (psi_n.conj().T @ psi_n) / n_traj
        state = DensityMatrix(space, rho_ens)
        pop_a, pop_b = state.boundary_populations()
        samples.append(McSample(
            xi=float(xi),
            p=p_mean,
            p_stderr=p_se,
            p1=p1,
            p1_stderr=p1_se,
            p_multi=float(p_multi),
            p_multi_stderr=p_multi_se,
            leaked=float(math.fsum(leaked) / n_traj),
            boundary_weight=float(math.fsum(boundary) / n_traj),
            trace_deficit=state.trace_deficit(),
            min_eigenvalue=state.min_eigenvalue(),
            boundary_pop_a=pop_a,
            boundary_pop_b=pop_b,
        ))

    def handle_crossings(k, psi_start, n_start, x_left, h_sub, psi_end, n_end):
        """Resolve one or more jumps of trajectory k inside a step."""
        gen = gens[k]
        uk = thresholds[k]
        while n_end < uk:
            frac = (n_start - uk) / (n_start - n_end)
            frac = min(max(frac, 0.0), 1.0)
            t_jump = x_left + frac * h_sub
            psi_star = prop_vector(psi_start, frac * h_sub)
            weights = np.array([rate * float(np.vdot(lm @ psi_star, lm @ psi_star).real)
                                for rate, lm, _ in jump_channels])
            total = weights.sum()
            if total <= 0.0:
                break  # no decay channel can fire; threshold unreachable
            pick = gen.random() * total
            chan = int(np.searchsorted(np.cumsum(weights), pick))
            chan = min(chan, len(jump_channels) - 1)
            rate, lm, name = jump_channels[chan]
            psi_jumped = lm @ psi_star
            psi_jumped /= np.linalg.norm(psi_jumped)
            jump_events.append((k, float(t_jump), name))
            jump_counts[name] += 1
            uk = gen.random()
            h_rem = h_sub - frac * h_sub
            psi_start = psi_jumped
            n_start = 1.0
            x_left = t_jump
            h_sub = h_rem
            if h_rem <= 0.0:
                psi_end = psi_jumped
                n_end = 1.0
                break
            psi_end = prop_vector(psi_jumped, h_rem)
            n_end = float(np.vdot(psi_end, psi_end).real)
        psi[k] = psi_end
        norms2[k] = n_end
        thresholds[k] = uk

    take_sample(0.0)
    for seg in range(grid.size - 1):
        x0, x1 = float(grid[seg]), float(grid[seg + 1])
        seg_len = x1 - x0
        n_steps = max(1, math.ceil(seg_len / options.step))
        h = seg_len / n_steps
        u_t = np.ascontiguousarray(prop_matrix(h).T)
        for istep in range(n_steps):
            x_left = x0 + istep * h
            psi_prev = psi
            norms_prev = norms2
            psi = psi_prev @ u_t
            norms2 = np.einsum("ij,ij->i", psi.conj(), psi).real
            if jump_channels:
                decay = 1.0 - norms2 / norms_prev
                worst = float(decay.max())
                if worst > options.max_norm_decay:
                    raise McConfigError(
                        f"norm decayed by {worst:.1%} in one step of {h:.3e}; "
                        f"reduce McOptions.step")
                crossed = np.nonzero(norms2 < thresholds)[0]
                for k in crossed:
                    handle_crossings(k, psi_prev[k], float(norms_prev[k]),
                                     x_left, h, psi[k].copy(),
                                     float(norms2[k]))
        take_sample(x1)

    final = samples[-1]
    stats = PairStatistics(
        convention=convention,
        p=final.p,
        p1=final.p1,
        p_multi=final.p_multi,
        leaked=final.leaked,
        boundary_weight=final.boundary_weight,
        mean_pairs=float((np.arange(final.p.size) * final.p).sum()),
    )
    return McResult(
        convention=convention,
        omega=model.omega,
        xi_grid=grid,
        samples=samples,
        stats=stats,
        n_traj=n_traj,
        rng_algorithm=RNG_ALGORITHM,
        rng_seed=options.rng_seed,
        step=options.step,
        jump_events=jump_events,
        jump_counts=jump_counts,
    )
