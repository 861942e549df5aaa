"""Pair-number statistics and antibunching metrics.

P_n is the probability that n photon pairs have been created.  Two
operational conventions are supported:

* ``idler-marginal`` (default): P_n = sum_{n_a} <n_a, n| rho |n_a, n>.
  With gamma_b = 0 the idler mode is lossless, so its photon count is a
  faithful record of pairs ever created, even after signal TPA events.
* ``joint-diagonal``: P_n = <n, n| rho |n, n>, i.e. the probability that n
  intact pairs are present; the weight that TPA has moved off the n_a = n_b
  diagonal is reported separately as ``leaked``.

In both conventions the top retained Fock level is excluded from the
reported distribution: its weight belongs to the truncation-boundary
diagnostic, not to p_multi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import DensityMatrix

IDLER_MARGINAL = "idler-marginal"
JOINT_DIAGONAL = "joint-diagonal"
CONVENTIONS = (IDLER_MARGINAL, JOINT_DIAGONAL)


def check_convention(convention: str) -> str:
    aliases = {"idler": IDLER_MARGINAL, "joint": JOINT_DIAGONAL}
    convention = aliases.get(convention, convention)
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    return convention


@dataclass
class PairStatistics:
    """P_n distribution extracted from a state under one counting convention.

    p[n] covers n = 0 .. n_max with the boundary level excluded; p_multi is
    exactly sum_{n>=2} p[n].  ``leaked`` is nonzero only for the
    joint-diagonal convention; ``boundary_weight`` is the diagonal weight in
    boundary Fock levels that was excluded from p.
    """

    convention: str
    p: np.ndarray
    p1: float
    p_multi: float
    leaked: float
    boundary_weight: float
    mean_pairs: float


def pair_probabilities(populations: np.ndarray, convention: str):
    """Vectorized distribution extraction from diagonal-population grids.

    populations has shape (..., dim_a, dim_b); returns (p, leaked, boundary)
    with p of shape (..., n_levels).  Shared by the master-equation and
    Monte Carlo paths so both apply identical counting rules.
    """
    convention = check_convention(convention)
    pops = np.asarray(populations, dtype=float)
    da, db = pops.shape[-2], pops.shape[-1]
    if convention == IDLER_MARGINAL:
        marg = pops.sum(axis=-2)
        p = marg[..., : db - 1]
        boundary = marg[..., db - 1]
        leaked = np.zeros_like(boundary)
        return p, leaked, boundary
    n_diag = min(da, db)
    idx = np.arange(n_diag - 1)
    p = pops[..., idx, idx]
    boundary = pops[..., da - 1, :].sum(axis=-1) + pops[..., : da - 1, db - 1].sum(axis=-1)
    interior = pops[..., : da - 1, : db - 1]
    leaked = interior.sum(axis=(-2, -1)) - p.sum(axis=-1)
    return p, leaked, boundary


def pair_distribution(rho: DensityMatrix, convention: str = IDLER_MARGINAL) -> PairStatistics:
    """P_n distribution of a state; see the module docstring for conventions."""
    convention = check_convention(convention)
    pops = rho.diagonal_populations()
    p, leaked, boundary = pair_probabilities(pops, convention)
    p = np.asarray(p, dtype=float)
    p1 = float(p[1]) if p.size > 1 else 0.0
    p_multi = float(p[2:].sum())
    mean_pairs = float((np.arange(p.size) * p).sum())
    return PairStatistics(
        convention=convention,
        p=p,
        p1=p1,
        p_multi=p_multi,
        leaked=float(leaked),
        boundary_weight=float(boundary),
        mean_pairs=mean_pairs,
    )


@dataclass
class AntibunchingMetrics:
    """Multi-pair suppression figures; None when p1 = 0 leaves them undefined."""

    ratio_to_p1_squared: float | None
    suppression_vs_tmsv: float | None


def antibunching_metrics(stats: PairStatistics) -> AntibunchingMetrics:
    """Compare p_multi against two uncorrelated baselines.

    ratio_to_p1_squared = p_multi / p1^2.  suppression_vs_tmsv divides the
    multi-pair probability of a two-mode squeezed vacuum with the same mean
    pair number by the observed p_multi (the TMSV multi-pair weight is
    tanh^4 r = (nbar/(1+nbar))^2).
    """
    if stats.p1 <= 0.0:
        return AntibunchingMetrics(None, None)
    if stats.p_multi == 0.0:
        return AntibunchingMetrics(0.0, 0.0)
    ratio = stats.p_multi / stats.p1**2
    nbar = stats.mean_pairs
    t = nbar / (1.0 + nbar)
    suppression = (t * t) / stats.p_multi
    if not math.isfinite(suppression):
        suppression = None
    return AntibunchingMetrics(ratio, suppression)
