"""Smoothing strategies on top of a forward particle pass.

Four methods:

* forward (trajectory) smoothing: the filter extended to carry whole
  trajectories, with the locality sort applied to full paths;
* marginal backward smoothing: an O(T N^2) weight recursion producing
  per-time smoothing weights over the forward particles;
* full backward sampling: N complete trajectories drawn backward with
  per-step weights W_t^m m_{t+1}(x_t^m, x) G_{t+1}(x_t^m, x), driven by a
  (T+1)-dimensional input point set;
* the hybrid variant: the same backward pass fed IID uniforms instead of
  a QMC set, which matches classical backward sampling in law.

All weight arithmetic is in log space.  Backward passes consume the
Hilbert permutations recorded by the forward pass, so their inverse-CDF
selections run over the sorted particle order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .filtering import ParticleHistory, inverse_cdf_resample
from .hilbert import HilbertMap, default_depth, hilbert_sort
from .models import FeynmanKacModel
from .pointsets import PointSet, generate_iid, generate_sobol, sort_by_first_coordinate

__all__ = [
    "SmoothingWeights",
    "TrajectorySet",
    "DegenerateBackwardKernelError",
    "ForwardDimensionError",
    "forward_smoothing",
    "marginal_backward_weights",
    "backward_sampling",
    "BackwardKernelCache",
    "prepare_backward_input",
    "smoothing_estimate",
    "resolve_phi",
]

MAX_TRAJECTORY_BITS = 62


class DegenerateBackwardKernelError(RuntimeError):
    """A backward-weight denominator underflowed to zero."""

    def __init__(self, t: int, which: str):
        super().__init__(f"backward kernel degenerate at t={t} ({which})")
        self.t = t


class ForwardDimensionError(ValueError):
    """Trajectory dimension exceeds what the curve order can index."""


@dataclass
class SmoothingWeights:
    """Per-time smoothing weights over the forward particles."""

    log_weights: list

    def __post_init__(self):
        for lw in self.log_weights:
            total = np.exp(logsumexp(lw))
            if abs(total - 1.0) > 1e-10:
                raise RuntimeError("smoothing weights do not sum to one")

    @property
    def weights(self) -> list:
        return [np.exp(lw) for lw in self.log_weights]


@dataclass
class TrajectorySet:
    """N trajectories in state space with a weight per trajectory.

    ``indices``, when present, holds the forward-particle index backing
    each trajectory state (backward sampling only selects among forward
    particles).
    """

    states: np.ndarray  # (N, T+1, d)
    weights: np.ndarray  # (N,)
    indices: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1] - 1


# -- test-function registry ----------------------------------------------------------


def resolve_phi(phi):
    """Map a registry id ('mean:i' or 'm2:i') or callable to a function."""
    if callable(phi):
        return phi
    kind, _, coord = str(phi).partition(":")
    i = int(coord or 0)
    if kind == "mean":
        return lambda x: x[..., i]
    if kind == "m2":
        return lambda x: x[..., i] ** 2
    raise ValueError(f"unknown test function id {phi!r}")


def smoothing_estimate(traj: TrajectorySet, phi) -> np.ndarray:
    """Weighted average of phi over trajectories, one value per time step."""
    f = resolve_phi(phi)
    w = traj.weights / traj.weights.sum()
    vals = f(traj.states)  # (N, T+1)
    return w @ vals


# -- marginal backward smoothing -------------------------------------------------------


def _streaming_logsumexp_update(run_max, run_sum, block):
    """Fold a block of log-values into per-column running (max, sum) pairs."""
    bmax = block.max(axis=0)
    new_max = np.maximum(run_max, bmax)
    safe = np.where(np.isfinite(new_max), new_max, 0.0)
    run_sum = run_sum * np.exp(run_max - safe) + np.exp(block - safe).sum(axis=0)
    return new_max, run_sum


def marginal_backward_weights(
    model: FeynmanKacModel, hist: ParticleHistory, max_block: int = 4_000_000
) -> SmoothingWeights:
    """Smoothing weights by the backward O(N^2)-per-step recursion.

    From the final filter weights, each step reweights time-t particles by
    how much backward mass the time-(t+1) cloud sends them; the inner
    denominator (the predictive mass of each x_{t+1}^m) is computed once
    per m.  Work proceeds in row blocks so only O(block) of the pairwise
    kernel matrix is alive at a time.
    """
    n, T = hist.n, hist.T
    lw = [None] * (T + 1)
    lw[T] = np.asarray(hist.log_weights[T], float).copy()
    chunk = max(1, max_block // n)
    bootstrap = not model.potential_depends_on_prev
    for t in range(T - 1, -1, -1):
        x_t, x_next = hist.xs[t], hist.xs[t + 1]
        lw_filter = hist.log_weights[t]

        def log_block(lo, hi):
            block = model.log_transition_matrix(t + 1, x_t[lo:hi], x_next)
            if not bootstrap:
                block = block + model.log_potential_matrix(t + 1, x_t[lo:hi], x_next)
            return block

        run_max = np.full(n, -np.inf)
        run_sum = np.zeros(n)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            run_max, run_sum = _streaming_logsumexp_update(
                run_max, run_sum, log_block(lo, hi) + lw_filter[lo:hi, None]
            )
        with np.errstate(divide="ignore"):
            denom = run_max + np.log(run_sum)
        if not np.all(np.isfinite(denom)):
            m_bad = int(np.argmin(np.isfinite(denom)))
            raise DegenerateBackwardKernelError(t + 1, f"denominator for particle m={m_bad}")

        carry = lw[t + 1] - denom
        bracket = np.empty(n)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            bracket[lo:hi] = logsumexp(log_block(lo, hi) + carry[None, :], axis=1)
        raw = lw_filter + bracket
        total = logsumexp(raw)
        if abs(np.exp(total) - 1.0) > 1e-10:
            raise RuntimeError(f"smoothing weights lost normalization at t={t}")
        lw[t] = raw - total
    return SmoothingWeights(log_weights=lw)


def marginal_smoothing_estimate(weights: SmoothingWeights, hist: ParticleHistory, phi) -> np.ndarray:
    f = resolve_phi(phi)
    return np.array(
        [np.exp(lw) @ f(x) for lw, x in zip(weights.log_weights, hist.xs)]
    )


# -- full backward sampling -------------------------------------------------------------


class BackwardKernelCache:
    """Per-step cumulative backward-weight tables over a frozen history.

    Column j of table t is the CDF (over the Hilbert-sorted time-t
    particles) of the backward weights given x_{t+1} = forward particle j.
    Costs O(T N^2) memory; worth it only when many backward passes reuse
    one history.
    """

    def __init__(self, model: FeynmanKacModel, hist: ParticleHistory):
        self.tables = [
            _backward_cdf_table(model, hist, t) for t in range(hist.T)
        ]


def _backward_cdf_table(model: FeynmanKacModel, hist: ParticleHistory, t: int) -> np.ndarray:
    """Cumulative backward CDF at time t, rows in sigma_t order."""
    sigma = hist.sigmas[t]
    logw = hist.log_weights[t][sigma][:, None] + model.log_transition_matrix(
        t + 1, hist.xs[t][sigma], hist.xs[t + 1]
    )
    if model.potential_depends_on_prev:
        logw = logw + model.log_potential_matrix(t + 1, hist.xs[t][sigma], hist.xs[t + 1])
    col_norm = logsumexp(logw, axis=0)
    if not np.all(np.isfinite(col_norm)):
        m_bad = int(np.argmin(np.isfinite(col_norm)))
        raise DegenerateBackwardKernelError(t, f"all backward weights vanish toward m={m_bad}")
    cdf = np.cumsum(np.exp(logw - col_norm[None, :]), axis=0)
    cdf[-1, :] = 1.0
    return cdf


def prepare_backward_input(n: int, T: int, kind: str, seed: int) -> PointSet:
    """Input point set for the backward pass, sorted on the time-T column.

    kind 'qmc' scrambles a (T+1)-dimensional Sobol set; 'iid' uses uniform
    variates (the hybrid pass); 'mixed' drives the time-T selection with a
    one-dimensional scrambled Sobol column and everything later with IID
    uniforms (exposed for experimentation, no accuracy claim attached).
    """
    if kind == "qmc":
        return sort_by_first_coordinate(generate_sobol(n, T + 1, scramble_seed=seed))
    if kind == "iid":
        return sort_by_first_coordinate(generate_iid(n, T + 1, seed=seed))
    if kind == "mixed":
        first = generate_sobol(n, 1, scramble_seed=seed).points
        rest = generate_iid(n, max(T, 1), seed=seed).points[:, : T]
        pts = np.column_stack([first, rest])
        return sort_by_first_coordinate(PointSet(pts, "iid", scramble_seed=seed))
    raise ValueError(f"unknown backward input kind {kind!r}")


def backward_sampling(
    model: FeynmanKacModel,
    hist: ParticleHistory,
    input_points,
    cache: BackwardKernelCache | None = None,
) -> TrajectorySet:
    """Draw complete trajectories backward through a frozen forward pass.

    Column 0 of the input selects the time-T states by inverse CDF over the
    Hilbert-sorted filter weights; column T - t then selects the time-t
    ancestor of each trajectory from its backward weights.  Every returned
    state is one of the forward particles; weights are uniform.

    The input must be row-sorted on column 0 (`prepare_backward_input`
    does this).  With IID rows the output coincides in law with classical
    backward sampling.
    """
    us = input_points.points if isinstance(input_points, PointSet) else np.asarray(input_points)
    n, T = hist.n, hist.T
    if us.ndim != 2 or us.shape[1] != T + 1:
        raise ValueError(f"backward input must have T+1 = {T + 1} columns")
    if np.any(np.diff(us[:, 0]) < 0):
        raise ValueError("backward input must be sorted on column 0 (time T)")
    rows = us.shape[0]
    idx = np.empty((rows, T + 1), dtype=np.int64)
    sigma_T = hist.sigmas[T]
    pos = inverse_cdf_resample(hist.weights[T][sigma_T], us[:, 0])
    idx[:, T] = sigma_T[pos]
    for t in range(T - 1, -1, -1):
        table = cache.tables[t] if cache is not None else _backward_cdf_table(model, hist, t)
        cols = table[:, idx[:, t + 1]]  # (n, rows)
        u_t = us[:, T - t]
        sel = (cols >= u_t[None, :]).argmax(axis=0)
        idx[:, t] = hist.sigmas[t][sel]
    states = np.stack([hist.xs[t][idx[:, t]] for t in range(T + 1)], axis=1)
    return TrajectorySet(states=states, weights=np.full(rows, 1.0 / rows), indices=idx)


# -- forward (trajectory) smoothing ------------------------------------------------------


def forward_smoothing(model: FeynmanKacModel, n: int, pointset_seed: int):
    """Quasi-Monte Carlo filter carrying full trajectories.

    The per-step locality sort runs on whole rescaled paths, through a
    curve on [0,1]^(d t) with correspondingly fewer bits per axis, so the
    horizon is capped at d*T <= 62.  Weights are the final filter weights.

    Returns the trajectory set and a diagnostic dict with the number of
    distinct time-0 ancestors after each step (path degeneracy).
    """
    from .filtering import _step_seed  # shared seed derivation

    if n < 2:
        raise ValueError("need at least 2 particles")
    d, T = model.d, model.T
    if d * T > MAX_TRAJECTORY_BITS:
        raise ForwardDimensionError(
            f"trajectory dimension d*T = {d * T} exceeds {MAX_TRAJECTORY_BITS} index bits; "
            "use a backward smoother for long horizons"
        )
    u0 = generate_sobol(n, d, scramble_seed=_step_seed(pointset_seed, 0))
    x = model.m0_inverse(u0.points)
    log_g = model.log_potential(0, None, x)
    logw = log_g - logsumexp(log_g)
    traj = x[:, None, :]
    roots = np.arange(n)
    distinct_roots = [n]
    for t in range(1, T + 1):
        ps = sort_by_first_coordinate(
            generate_sobol(n, d + 1, scramble_seed=_step_seed(pointset_seed, t))
        )
        flat = model.rescaler.rescale(traj).reshape(n, t * d)
        hmap = HilbertMap(t * d, default_depth(t * d))
        sigma = hilbert_sort(hmap, flat)
        pos = inverse_cdf_resample(np.exp(logw)[sigma], ps.points[:, 0])
        anc = sigma[pos]
        x_prev = traj[anc, -1, :]
        x = model.mutate_inverse(t, x_prev, ps.points[:, 1:])
        traj = np.concatenate([traj[anc], x[:, None, :]], axis=1)
        roots = roots[anc]
        distinct_roots.append(len(np.unique(roots)))
        log_g = model.log_potential(t, x_prev, x)
        logw = log_g - logsumexp(log_g)
    return (
        TrajectorySet(states=traj, weights=np.exp(logw)),
        {"distinct_time0_ancestors": np.array(distinct_roots)},
    )
