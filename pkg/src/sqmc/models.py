"""State-space models in Feynman-Kac form.

A model supplies the initial law m_0, the transition kernel m_t (through
its inverse Rosenblatt transform, so uniforms can be routed through it),
the pointwise transition density needed by backward smoothers, and the
potential G_t.  Both built-in models are bootstrap-form: G_t is the
observation density and depends on the current state only.

Gaussian kernels implement the Rosenblatt transform through the Cholesky
factor: with S = L L^T, the map u -> mean + L ndtri(u) visits the
coordinatewise conditionals in order, each strictly increasing in its own
uniform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, ndtr, ndtri

__all__ = [
    "GaussianKernel",
    "StateRescaler",
    "FeynmanKacModel",
    "SVParams",
    "LGParams",
    "make_sv_model",
    "make_lg_model",
    "simulate_sv_data",
    "simulate_lg_data",
    "kalman_filter",
    "kalman_smoother",
    "load_config",
    "build_model",
    "save_data_csv",
]

# uniforms are nudged off {0, 1} before ndtri so states stay finite
_V_EPS = 2.0 ** -53

_LOG_2PI = np.log(2.0 * np.pi)


def _clip_uniforms(v: np.ndarray) -> np.ndarray:
    return np.clip(v, _V_EPS, 1.0 - _V_EPS)


class GaussianKernel:
    """Conditional Gaussian x | x_prev ~ N(A x_prev + b, cov).

    ``mean_matrix`` may be None for a constant-mean kernel (initial laws).
    The covariance must be symmetric positive definite; its Cholesky factor
    is validated at construction.
    """

    def __init__(self, mean_matrix, mean_offset, cov):
        self.A = None if mean_matrix is None else np.atleast_2d(np.asarray(mean_matrix, float))
        self.b = np.atleast_1d(np.asarray(mean_offset, float))
        self.cov = np.atleast_2d(np.asarray(cov, float))
        self.d = self.cov.shape[0]
        if self.cov.shape != (self.d, self.d) or not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be square and symmetric")
        try:
            self.chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        if not np.allclose(self.chol @ self.chol.T, self.cov, rtol=1e-10, atol=1e-14):
            raise ValueError("Cholesky factor does not reproduce the covariance")
        self._chol_inv = solve_triangular(self.chol, np.eye(self.d), lower=True)
        self._log_norm = 0.5 * self.d * _LOG_2PI + np.log(np.diag(self.chol)).sum()

    def mean(self, x_prev) -> np.ndarray:
        if self.A is None:
            n = 1 if x_prev is None else np.atleast_2d(x_prev).shape[0]
            return np.broadcast_to(self.b, (n, self.d))
        return np.atleast_2d(x_prev) @ self.A.T + self.b

    def rosenblatt_inverse(self, x_prev, v) -> np.ndarray:
        """Map uniforms on [0,1)^d to kernel draws, conditional on x_prev."""
        z = ndtri(_clip_uniforms(np.atleast_2d(v)))
        return self.mean(x_prev) + z @ self.chol.T

    def rosenblatt_forward(self, x_prev, x) -> np.ndarray:
        """Exact inverse of :meth:`rosenblatt_inverse` (up to the clipping)."""
        x = np.atleast_2d(x)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state")
        z = (x - self.mean(x_prev)) @ self._chol_inv.T
        return ndtr(z)

    def logpdf(self, x_prev, x) -> np.ndarray:
        z = (np.atleast_2d(x) - self.mean(x_prev)) @ self._chol_inv.T
        return -0.5 * np.einsum("ij,ij->i", z, z) - self._log_norm

    def logpdf_matrix(self, x_prev, x, max_block: int = 4_000_000) -> np.ndarray:
        """log density of each x (columns) under the kernel from each x_prev (rows)."""
        x = np.atleast_2d(x)
        means = self.mean(x_prev)
        n, m = means.shape[0], x.shape[0]
        out = np.empty((n, m))
        rows = max(1, max_block // max(m * self.d, 1))
        zx = x @ self._chol_inv.T
        zmu = means @ self._chol_inv.T
        for lo in range(0, n, rows):
            hi = min(lo + rows, n)
            diff = zx[None, :, :] - zmu[lo:hi, None, :]
            out[lo:hi] = -0.5 * np.einsum("ijk,ijk->ij", diff, diff) - self._log_norm
        return out


@dataclass(frozen=True)
class StateRescaler:
    """Componentwise logistic bijection from R^d onto (0,1)^d.

    Outputs are clamped to [eps, 1-eps] so downstream curve indexing never
    sees an exact endpoint.
    """

    loc: np.ndarray
    scale: np.ndarray
    eps: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "loc", np.atleast_1d(np.asarray(self.loc, float)))
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, float)))
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")

    def rescale(self, x) -> np.ndarray:
        z = (np.asarray(x, float) - self.loc) / self.scale
        return np.clip(expit(z), self.eps, 1.0 - self.eps)

    def unrescale(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        return self.loc + self.scale * np.log(y / (1.0 - y))


class FeynmanKacModel:
    """Bootstrap-form state-space model built from Gaussian kernels.

    Subclass responsibilities: set d, T, ys, m0 (constant-mean kernel),
    transition (kernel of x_t | x_{t-1}), rescaler, and log_potential.
    """

    #: True if G_t(x_prev, x) genuinely uses x_prev; bootstrap models keep
    #: the two-argument signature but ignore the first one.
    potential_depends_on_prev = False

    d: int
    T: int
    model_id = "generic"

    m0: GaussianKernel
    transition: GaussianKernel
    rescaler: StateRescaler

    def kernel(self, t: int) -> GaussianKernel:
        return self.m0 if t == 0 else self.transition

    def m0_inverse(self, u) -> np.ndarray:
        return self.m0.rosenblatt_inverse(None, u)

    def mutate_inverse(self, t: int, x_prev, v) -> np.ndarray:
        return self.transition.rosenblatt_inverse(x_prev, v)

    def mutate_forward(self, t: int, x_prev, x) -> np.ndarray:
        return self.transition.rosenblatt_forward(x_prev, x)

    def log_transition(self, t: int, x_prev, x) -> np.ndarray:
        return self.transition.logpdf(x_prev, x)

    def transition_density(self, t: int, x_prev, x) -> np.ndarray:
        return np.exp(self.log_transition(t, x_prev, x))

    def log_transition_matrix(self, t: int, x_prev, x) -> np.ndarray:
        return self.transition.logpdf_matrix(x_prev, x)

    def log_potential(self, t: int, x_prev, x) -> np.ndarray:
        raise NotImplementedError

    def potential(self, t: int, x_prev, x) -> np.ndarray:
        return np.exp(self.log_potential(t, x_prev, x))

    def log_potential_matrix(self, t: int, x_prev, x) -> np.ndarray:
        """Pairwise G_t(x_prev_row, x_col); consulted by backward passes only
        when the potential genuinely uses its first argument."""
        x_prev = np.atleast_2d(x_prev)
        x = np.atleast_2d(x)
        return np.stack(
            [self.log_potential(t, np.broadcast_to(xp, x.shape), x) for xp in x_prev]
        )


# -- multivariate stochastic volatility -----------------------------------------


@dataclass(frozen=True)
class SVParams:
    """AR(1) log-volatility parameters; defaults follow the common benchmark
    configuration (phi = 0.9, mu = -9, psi = 0.1, block-equicorrelated noise)."""

    phi: float = 0.9
    mu: float = -9.0
    psi: float = 0.1
    obs_corr: float = 0.6
    state_corr: float = 0.8


def _equicorrelation(d: int, rho: float) -> np.ndarray:
    return rho * np.ones((d, d)) + (1.0 - rho) * np.eye(d)


def sv_stationary_cov(d: int, params: SVParams) -> np.ndarray:
    """Solution V of V = Phi V Phi^T + Psi^(1/2) C Psi^(1/2) for diagonal Phi."""
    phi = np.full(d, params.phi)
    innov = params.psi * _equicorrelation(d, params.state_corr)
    return innov / (1.0 - np.outer(phi, phi))


class SVModel(FeynmanKacModel):
    """y_t = S_t^(1/2) eps_t with S_t = diag(exp(x_t)); x_t Gaussian AR(1).

    The potential is the observation density N(y_t; 0, S_t): it depends on
    x_t only, so the model is in bootstrap form.  Simulated data draws the
    (eps, nu) pair from the full joint correlation matrix even though the
    filter's potential ignores the within-observation correlation block.
    """

    potential_depends_on_prev = False

    def __init__(self, d: int, params: SVParams, ys: np.ndarray):
        ys = np.atleast_2d(np.asarray(ys, float))
        if ys.shape[1] != d:
            raise ValueError(f"observations must have {d} columns")
        self.d = d
        self.params = params
        self.ys = ys
        self.T = ys.shape[0] - 1
        self.model_id = f"sv{d}d"
        mu = np.full(d, params.mu)
        phi_mat = params.phi * np.eye(d)
        innov = params.psi * _equicorrelation(d, params.state_corr)
        try:
            v_stat = sv_stationary_cov(d, params)
            self.m0 = GaussianKernel(None, mu, v_stat)
            self.transition = GaussianKernel(phi_mat, mu - phi_mat @ mu, innov)
        except ValueError as exc:
            raise ValueError(f"SV construction failed: {exc}") from exc
        self.rescaler = StateRescaler(mu, np.sqrt(np.diag(v_stat)))

    def log_potential(self, t, x_prev, x):
        x = np.atleast_2d(x)
        y = self.ys[t]
        return -0.5 * np.sum(_LOG_2PI + x + (y * y) * np.exp(-x), axis=1)


def simulate_sv_data(d: int, params: SVParams, T: int, seed: int):
    """States and observations for t in 0:T, reproducible from the seed.

    The (eps_t, nu_t) innovation pairs are drawn jointly from the 2d x 2d
    block correlation matrix; x_0 comes from the stationary law.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    c_full = np.zeros((2 * d, 2 * d))
    c_full[:d, :d] = _equicorrelation(d, params.obs_corr)
    c_full[d:, d:] = _equicorrelation(d, params.state_corr)
    chol_full = np.linalg.cholesky(c_full)
    mu = np.full(d, params.mu)
    v_stat = sv_stationary_cov(d, params)
    xs = np.empty((T + 1, d))
    ys = np.empty((T + 1, d))
    xs[0] = mu + np.linalg.cholesky(v_stat) @ rng.standard_normal(d)
    z = rng.standard_normal((T + 1, 2 * d)) @ chol_full.T
    eps, nu = z[:, :d], z[:, d:]
    sqrt_psi = np.sqrt(params.psi)
    for t in range(1, T + 1):
        xs[t] = mu + params.phi * (xs[t - 1] - mu) + sqrt_psi * nu[t]
    ys[:] = np.exp(xs / 2.0) * eps
    return xs, ys


def make_sv_model(d: int, params: SVParams | None = None, ys=None) -> SVModel:
    return SVModel(d, params or SVParams(), ys)


# -- scalar linear-Gaussian model ------------------------------------------------


@dataclass(frozen=True)
class LGParams:
    """x_t = rho x_{t-1} + sigma eps_t, y_t = x_t + tau eta_t."""

    rho: float = 0.9
    sigma: float = 0.5
    tau: float = 0.5

    def __post_init__(self):
        if abs(self.rho) >= 1.0:
            raise ValueError("need |rho| < 1 for a stationary initial law")
        if self.sigma <= 0 or self.tau <= 0:
            raise ValueError("sigma and tau must be positive")

    @property
    def stationary_var(self) -> float:
        return self.sigma ** 2 / (1.0 - self.rho ** 2)


class LGModel(FeynmanKacModel):
    potential_depends_on_prev = False
    model_id = "lg1d"

    def __init__(self, params: LGParams, ys):
        ys = np.asarray(ys, float).reshape(-1, 1)
        self.d = 1
        self.params = params
        self.ys = ys
        self.T = ys.shape[0] - 1
        self.m0 = GaussianKernel(None, [0.0], [[params.stationary_var]])
        self.transition = GaussianKernel([[params.rho]], [0.0], [[params.sigma ** 2]])
        self.rescaler = StateRescaler([0.0], [np.sqrt(params.stationary_var)])

    def log_potential(self, t, x_prev, x):
        x = np.atleast_2d(x)
        resid = (self.ys[t, 0] - x[:, 0]) / self.params.tau
        return -0.5 * (_LOG_2PI + resid * resid) - np.log(self.params.tau)


def simulate_lg_data(params: LGParams, T: int, seed: int):
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    xs = np.empty(T + 1)
    xs[0] = np.sqrt(params.stationary_var) * rng.standard_normal()
    eps = rng.standard_normal(T + 1)
    eta = rng.standard_normal(T + 1)
    for t in range(1, T + 1):
        xs[t] = params.rho * xs[t - 1] + params.sigma * eps[t]
    ys = xs + params.tau * eta
    return xs, ys


def make_lg_model(params: LGParams | None = None, ys=None) -> LGModel:
    return LGModel(params or LGParams(), ys)


# -- exact Kalman filter / RTS smoother (scalar oracle) ---------------------------


def kalman_filter(params: LGParams, ys):
    """Filtering means/variances and the exact log-likelihood."""
    ys = np.asarray(ys, float).reshape(-1)
    T = len(ys) - 1
    filt_m = np.empty(T + 1)
    filt_v = np.empty(T + 1)
    pred_m = np.empty(T + 1)
    pred_v = np.empty(T + 1)
    pred_m[0], pred_v[0] = 0.0, params.stationary_var
    tau2 = params.tau ** 2
    loglik = 0.0
    for t in range(T + 1):
        s = pred_v[t] + tau2
        loglik += -0.5 * (_LOG_2PI + np.log(s) + (ys[t] - pred_m[t]) ** 2 / s)
        gain = pred_v[t] / s
        filt_m[t] = pred_m[t] + gain * (ys[t] - pred_m[t])
        filt_v[t] = (1.0 - gain) * pred_v[t]
        if t < T:
            pred_m[t + 1] = params.rho * filt_m[t]
            pred_v[t + 1] = params.rho ** 2 * filt_v[t] + params.sigma ** 2
    return {
        "filter_mean": filt_m,
        "filter_var": filt_v,
        "pred_mean": pred_m,
        "pred_var": pred_v,
        "loglik": loglik,
    }


def kalman_smoother(params: LGParams, ys):
    """Exact E[x_t | y_{0:T}] and Var[x_t | y_{0:T}] via the RTS backward pass."""
    out = kalman_filter(params, ys)
    filt_m, filt_v = out["filter_mean"], out["filter_var"]
    pred_m, pred_v = out["pred_mean"], out["pred_var"]
    T = len(filt_m) - 1
    sm_m = filt_m.copy()
    sm_v = filt_v.copy()
    for t in range(T - 1, -1, -1):
        j = filt_v[t] * params.rho / pred_v[t + 1]
        sm_m[t] = filt_m[t] + j * (sm_m[t + 1] - pred_m[t + 1])
        sm_v[t] = filt_v[t] + j * j * (sm_v[t + 1] - pred_v[t + 1])
    out.update({"smooth_mean": sm_m, "smooth_var": sm_v})
    return out


# -- configuration / data files ----------------------------------------------------


def load_config(path) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    if cfg.get("model") not in ("sv2d", "lg1d"):
        raise ValueError("config field 'model' must be 'sv2d' or 'lg1d'")
    if "y" not in cfg and "data_seed" not in cfg:
        raise ValueError("config needs either explicit 'y' or a 'data_seed'")
    return cfg


def build_model(cfg: dict, t_override: int | None = None) -> FeynmanKacModel:
    """Instantiate a model from a config dict.

    With ``data_seed`` the observations are simulated; a ``t_override``
    shortens (or lengthens) the horizon while keeping the same data stream,
    so shorter profiles see a prefix of the same realisation.
    """
    T = int(t_override if t_override is not None else cfg["T"])
    name = cfg["model"]
    p = cfg.get("params", {})
    if name == "lg1d":
        params = LGParams(**p)
        if "y" in cfg:
            ys = np.asarray(cfg["y"], float).reshape(-1)[: T + 1]
        else:
            _, ys = simulate_lg_data(params, T, cfg["data_seed"])
        return make_lg_model(params, ys)
    params = SVParams(**p)
    d = int(cfg.get("d", 2))
    if "y" in cfg:
        ys = np.asarray(cfg["y"], float)[: T + 1]
    else:
        _, ys = simulate_sv_data(d, params, T, cfg["data_seed"])
    model = make_sv_model(d, params, ys)
    if "rescale" in cfg:
        model.rescaler = StateRescaler(cfg["rescale"]["loc"], cfg["rescale"]["scale"])
    return model


def save_data_csv(path, xs, ys) -> None:
    """Dump simulated (t, y, x) rows for reproducibility."""
    xs = np.atleast_2d(np.asarray(xs, float).T).T
    ys = np.atleast_2d(np.asarray(ys, float).T).T
    d = ys.shape[1]
    with open(path, "w") as f:
        head = ["t"] + [f"y{i + 1}" for i in range(d)] + [f"x{i + 1}" for i in range(d)]
        f.write(",".join(head) + "\n")
        for t in range(ys.shape[0]):
            row = [str(t)] + [repr(float(v)) for v in ys[t]] + [repr(float(v)) for v in xs[t]]
            f.write(",".join(row) + "\n")
