"""Forward passes: particle filtering with Monte Carlo or quasi-Monte Carlo inputs.

Both drivers route mutation through the model's inverse Rosenblatt
transform, so they differ only in where the uniforms come from: IID
streams plus systematic resampling for the Monte Carlo filter, scrambled
Sobol point sets plus inverse-CDF resampling over the Hilbert-sorted
particle cloud for the quasi-Monte Carlo one.  Resampling happens at
every step; all weight arithmetic is in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .hilbert import HilbertMap, hilbert_sort
from .models import FeynmanKacModel
from .pointsets import generate_sobol, sort_by_first_coordinate

__all__ = [
    "ParticleHistory",
    "DegenerateWeightsError",
    "run_smc",
    "run_sqmc",
    "systematic_resample",
    "inverse_cdf_resample",
    "estimate_log_likelihood",
    "filtered_means",
]


class DegenerateWeightsError(RuntimeError):
    """All potentials vanished at some step."""

    def __init__(self, t: int):
        super().__init__(f"all particle weights underflowed to zero at t={t}")
        self.t = t


@dataclass
class ParticleHistory:
    """Everything a smoother needs from a forward pass.

    Per time step: particle positions (raw state coordinates), normalized
    weights (and their logs), ancestor indices (t >= 1), the permutation
    sorting particles by the Hilbert index of their rescaled positions,
    and the log normalizing-constant increment log(N^-1 sum G_t).
    """

    algo: str
    n: int
    d: int
    xs: list = field(default_factory=list)
    log_weights: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    ancestors: list = field(default_factory=list)  # ancestors[t] for t >= 1, index t-1
    sigmas: list = field(default_factory=list)
    log_increments: list = field(default_factory=list)
    hilbert_collisions: int = 0

    @property
    def T(self) -> int:
        return len(self.xs) - 1

    def _append_step(self, x, log_g, sigma):
        norm = logsumexp(log_g)
        if not np.isfinite(norm):
            raise DegenerateWeightsError(len(self.xs))
        logw = log_g - norm
        self.xs.append(x)
        self.log_weights.append(logw)
        self.weights.append(np.exp(logw))
        self.sigmas.append(sigma)
        self.log_increments.append(norm - np.log(self.n))
        assert abs(self.weights[-1].sum() - 1.0) < 1e-12
        assert len(sigma) == self.n


def systematic_resample(weights: np.ndarray, u: float, n_draws: int | None = None) -> np.ndarray:
    """Systematic resampling: one uniform spawns all stratified positions.

    Particle m receives the positions falling in [cum(m-1), cum(m)), so an
    exact boundary hit selects the next particle; with uniform weights any
    u keeps exactly one copy of everyone.
    """
    n = n_draws or len(weights)
    positions = (u + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), len(weights) - 1)


def inverse_cdf_resample(sorted_weights: np.ndarray, us: np.ndarray) -> np.ndarray:
    """Right-continuous generalized inverse of the cumulative weights.

    For each u, the smallest position m with cum(m) >= u.  ``us`` must be
    nondecreasing (so the output is too).  Implemented as a cumulative sum
    plus a sorted lookup, which reproduces, float for float, the result of
    the single merge pass over (cumulative weights, us).
    """
    us = np.asarray(us, float)
    if np.any(np.diff(us) < 0):
        raise ValueError("us must be nondecreasing")
    cum = np.cumsum(sorted_weights)
    pos = np.searchsorted(cum, us, side="left")
    # us may exceed the last cumulative value by rounding; pin to the end
    return np.minimum(pos, len(cum) - 1).astype(np.int64)


def _sigma_of(model: FeynmanKacModel, hmap: HilbertMap, x: np.ndarray):
    """Hilbert permutation of the rescaled particle cloud + collision count."""
    rescaled = model.rescaler.rescale(x)
    perm = hilbert_sort(hmap, rescaled)
    return perm


def run_smc(model: FeynmanKacModel, n: int, seed: int) -> ParticleHistory:
    """Monte Carlo bootstrap filter with systematic resampling at every step.

    Mutation uses the same inverse-Rosenblatt route as the QMC driver (fed
    with IID uniforms, which is equivalent in law to direct sampling), so
    the two filters differ only in their uniform input source.
    """
    if n < 2:
        raise ValueError("need at least 2 particles")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    hmap = HilbertMap(model.d)
    hist = ParticleHistory(algo="smc", n=n, d=model.d)
    x = model.m0_inverse(rng.random((n, model.d)))
    hist._append_step(x, model.log_potential(0, None, x), _sigma_of(model, hmap, x))
    for t in range(1, model.T + 1):
        anc = systematic_resample(hist.weights[-1], rng.random())
        x_prev = hist.xs[-1][anc]
        x = model.mutate_inverse(t, x_prev, rng.random((n, model.d)))
        hist.ancestors.append(anc)
        hist._append_step(x, model.log_potential(t, x_prev, x), _sigma_of(model, hmap, x))
    return hist


def _step_seed(pointset_seed: int, t: int) -> int:
    ss = np.random.SeedSequence(entropy=int(pointset_seed), spawn_key=(t,))
    return int(ss.generate_state(1, np.uint64)[0])


def run_sqmc(model: FeynmanKacModel, n: int, pointset_seed: int) -> ParticleHistory:
    """Quasi-Monte Carlo filter.

    At t = 0 a scrambled d-dimensional Sobol set feeds the initial inverse
    Rosenblatt; afterwards each step consumes a (d+1)-dimensional scrambled
    set sorted on its first coordinate: that coordinate resamples ancestors
    through the inverse CDF of the Hilbert-sorted weights, the remaining d
    coordinates drive the mutation.  Each step scrambles with an
    independently derived seed.
    """
    if n < 2:
        raise ValueError("need at least 2 particles")
    hmap = HilbertMap(model.d)
    hist = ParticleHistory(algo="sqmc", n=n, d=model.d)
    u0 = generate_sobol(n, model.d, scramble_seed=_step_seed(pointset_seed, 0))
    x = model.m0_inverse(u0.points)
    hist._append_step(x, model.log_potential(0, None, x), _sigma_of(model, hmap, x))
    for t in range(1, model.T + 1):
        ps = generate_sobol(n, model.d + 1, scramble_seed=_step_seed(pointset_seed, t))
        ps = sort_by_first_coordinate(ps)
        sigma = hist.sigmas[-1]
        sorted_pos = inverse_cdf_resample(hist.weights[-1][sigma], ps.points[:, 0])
        anc = sigma[sorted_pos]
        x_prev = hist.xs[-1][anc]
        x = model.mutate_inverse(t, x_prev, ps.points[:, 1:])
        hist.ancestors.append(anc)
        hist._append_step(x, model.log_potential(t, x_prev, x), _sigma_of(model, hmap, x))
    return hist


def estimate_log_likelihood(hist: ParticleHistory) -> float:
    """sum_t log(N^-1 sum_n unnormalized G_t^n)."""
    return float(np.sum(hist.log_increments))


def filtered_means(hist: ParticleHistory) -> np.ndarray:
    """Weighted particle mean per time step, shape (T+1, d)."""
    return np.array([w @ x for w, x in zip(hist.weights, hist.xs)])
