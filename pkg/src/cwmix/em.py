"""EM / ECM fitting for every model variant, with multi-start initialization.

Gaussian variants use plain EM. Student-t variants use ECM: the E-step adds
latent precision weights u = (dof + q) / (dof + mahalanobis), and the dof
update is a one-dimensional conditional maximization solved by bisection.
The fmrc gating M-step is a penalized Newton ascent (GEM), so every accepted
step keeps the observed-data log-likelihood non-decreasing.
"""

from __future__ import annotations

import math
import warnings
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .densities import (
    GaussianParams,
    StudentParams,
    cholesky_lower,
    digamma,
    log_sum_exp,
    mahalanobis_sq,
    solve_spd,
)
from .model import (
    VARIANTS,
    Component,
    Conditional,
    CwmModel,
    Dataset,
    Gating,
    LinearMap,
    _log_component_terms,
    fmg_to_cwm,
)

DOF_BRACKET = (0.5, 200.0)
_INIT_DOF = 10.0

#: Relative floor on fitted noise variance; a component collapsing onto an
#: exact line is a spurious likelihood spike, not a solution.
_NOISE_VAR_FLOOR = 1e-10

_INITS = ("kmeans", "random_partition", "given_labels")

_Weights = namedtuple("_Weights", ["x", "y"])


class DegenerateFitError(RuntimeError):
    """Every start collapsed (empty cluster, singular design, zero variance)."""


class _DegenerateStart(Exception):
    """Internal signal: abandon the current start and try the next one."""


@dataclass(frozen=True)
class FitConfig:
    G: int
    variant: str = "gaussian_cwm"
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_starts: int = 10
    init: str = "kmeans"
    dof_mode: float | str = "estimate"
    equal_weights: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.G < 1:
            raise ValueError("G must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.init not in _INITS:
            raise ValueError(f"init must be one of {_INITS}")
        if self.dof_mode != "estimate":
            if not isinstance(self.dof_mode, (int, float)) or not self.dof_mode > 0:
                raise ValueError("dof_mode must be 'estimate' or a positive number")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class FitResult:
    model: CwmModel
    loglik_trace: np.ndarray
    responsibilities: np.ndarray
    converged: bool
    n_iter: int
    start_index: int


# ------------------------------------------------------------ initialization

def _kmeans_labels(z: np.ndarray, G: int, rng, max_iter: int = 20) -> np.ndarray:
    n = z.shape[0]
    for _ in range(50):
        centers = z[rng.choice(n, size=G, replace=False)]
        assign = None
        ok = True
        for _ in range(max_iter):
            dist = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_assign = dist.argmin(axis=1)
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            counts = np.bincount(assign, minlength=G)
            if np.any(counts == 0):
                ok = False
                break
            centers = np.stack([z[assign == g].mean(axis=0) for g in range(G)])
        if ok:
            return assign
    raise ValueError("k-means produced an empty cluster in every attempt")


def initialize(data: Dataset, config: FitConfig, rng) -> np.ndarray:
    """Hard-partition initial responsibilities (N-by-G of zeros and ones)."""
    if data.n <= config.G:
        raise ValueError("need more observations than groups")
    G = config.G
    if config.init == "given_labels":
        if data.labels is None:
            raise ValueError("given_labels initialization requires data.labels")
        labels = data.labels
        if np.any((labels < 1) | (labels > G)):
            raise ValueError(f"labels must lie in 1..{G}")
        assign = labels - 1
    elif config.init == "random_partition":
        for _ in range(50):
            assign = rng.integers(0, G, size=data.n)
            if len(np.unique(assign)) == G:
                break
        else:
            raise ValueError("random partition left a cluster empty in every attempt")
    else:
        assign = _kmeans_labels(np.column_stack([data.x, data.y]), G, rng)
    resp = np.zeros((data.n, G))
    resp[np.arange(data.n), assign] = 1.0
    return resp


# ----------------------------------------------------------- dof estimation

def estimate_dof(weighted_stat: float, bracket: tuple[float, float] = DOF_BRACKET) -> float:
    """Solve -digamma(v/2) + log(v/2) + 1 + stat = 0 for v by bisection.

    The left side is strictly decreasing in v. If it has no sign change on
    the bracket, the nearer boundary is returned with a warning; weights
    identically 1 (stat = -1, the Gaussian limit) land on the upper bound.
    """
    if not np.isfinite(weighted_stat):
        raise ValueError("non-finite dof statistic")
    lo, hi = bracket

    def f(nu):
        return -digamma(nu / 2.0) + math.log(nu / 2.0) + 1.0 + weighted_stat

    if f(lo) <= 0.0:
        warnings.warn("dof root below bracket; returning the lower bound", RuntimeWarning)
        return lo
    if f(hi) >= 0.0:
        warnings.warn("dof root above bracket; returning the upper bound", RuntimeWarning)
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def _solve_dof(old_dof: float, q: int, r: np.ndarray, u: np.ndarray) -> float:
    # Exact conditional maximizer in the dof: fold the E-step's E[log U]
    # digamma correction into the statistic before the bisection solve.
    stat = float((r * (np.log(u) - u)).sum() / r.sum())
    stat += float(digamma((old_dof + q) / 2.0)) - math.log((old_dof + q) / 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return estimate_dof(stat)


# ------------------------------------------------------------------- M-step

def _regularize_cov(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    cov = 0.5 * (cov + cov.T)
    try:
        cholesky_lower(cov)
        return cov, False
    except ValueError:
        pass
    ridge = 1e-8 * np.trace(cov) / cov.shape[0]
    cov = cov + ridge * np.eye(cov.shape[0])
    try:
        cholesky_lower(cov)
    except ValueError:
        raise _DegenerateStart("singular covariance after regularization") from None
    return cov, True


def _weighted_ls(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    design = np.column_stack([x, np.ones(x.shape[0])])
    weighted = design * w[:, None]
    try:
        beta = solve_spd(design.T @ weighted, weighted.T @ y)
    except ValueError:
        raise _DegenerateStart("singular weighted design") from None
    return beta[:-1], float(beta[-1])


def _fmt_joint_params(comp: Component) -> StudentParams:
    """Reassemble the (d+1)-variate t scale from the decomposed component."""
    marg, cond = comp.x_marginal, comp.y_conditional
    d = marg.dim
    slope = cond.map.slope
    sxy = marg.scale @ slope
    scale = np.empty((d + 1, d + 1))
    scale[:d, :d] = marg.scale
    scale[:d, d] = sxy
    scale[d, :d] = sxy
    scale[d, d] = cond.noise_scale**2 + float(slope @ sxy)
    return StudentParams(np.append(marg.location, cond.map(marg.location)), scale, marg.dof)


def _latent_weights(model: CwmModel | None, x, y, z) -> _Weights:
    """Per-point t precision weights from the current parameters; the joint
    weight for fmt rides in the x slot."""
    if model is None or model.variant not in ("t_cwm", "fmt"):
        return _Weights(None, None)
    n, G = x.shape[0], model.G
    if model.variant == "fmt":
        uz = np.empty((n, G))
        for g, comp in enumerate(model.components):
            joint = _fmt_joint_params(comp)
            uz[:, g] = (joint.dof + z.shape[1]) / (joint.dof + mahalanobis_sq(z, joint))
        return _Weights(uz, None)
    ux = np.empty((n, G))
    uy = np.empty((n, G))
    for g, comp in enumerate(model.components):
        nu = comp.x_marginal.dof
        ux[:, g] = (nu + x.shape[1]) / (nu + mahalanobis_sq(x, comp.x_marginal))
        cond = comp.y_conditional
        delta_y = (y - cond.map(x)) ** 2 / cond.noise_scale**2
        uy[:, g] = (cond.dof + 1.0) / (cond.dof + delta_y)
    return _Weights(ux, uy)


def _fit_gating(x: np.ndarray, resp: np.ndarray, old_gating) -> list[Gating]:
    """Penalized Newton ascent on the gating log-likelihood, warm-started;
    step-halving keeps this a GEM update (never decreases the objective)."""
    n, d = x.shape
    G = resp.shape[1]
    design = np.column_stack([x, np.ones(n)])
    theta = np.array([np.append(g.w, g.w0) for g in old_gating[1:]])

    def log_gate(th):
        logits = np.zeros((n, G))
        logits[:, 1:] = design @ th.T
        return logits - log_sum_exp(logits, axis=1)[:, None]

    def objective(th):
        return float(np.sum(resp * log_gate(th)))

    value = objective(theta)
    k = (G - 1) * (d + 1)
    for _ in range(25):
        prob = np.exp(log_gate(theta))
        grad = ((resp - prob)[:, 1:, None] * design[:, None, :]).sum(axis=0)
        if np.max(np.abs(grad)) < 1e-10:
            break
        hess = np.zeros((k, k))  # negated Hessian, positive semidefinite
        for g in range(1, G):
            for h in range(1, G):
                w = prob[:, g] * ((1.0 if g == h else 0.0) - prob[:, h])
                block = (design * w[:, None]).T @ design
                hess[(g - 1) * (d + 1):g * (d + 1), (h - 1) * (d + 1):h * (d + 1)] = block
        try:
            step = solve_spd(hess + 1e-6 * np.eye(k), grad.ravel()).reshape(G - 1, d + 1)
        except ValueError:
            break
        scale = 1.0
        for _ in range(20):
            candidate = theta + scale * step
            new_value = objective(candidate)
            if new_value >= value - 1e-12:
                break
            scale *= 0.5
        else:
            break
        theta, value = candidate, new_value
    return [Gating(np.zeros(d), 0.0)] + [
        Gating(theta[i, :d].copy(), float(theta[i, d])) for i in range(G - 1)
    ]


def _next_dofs(config, old_model, g, d, r, ux, uy):
    if config.dof_mode != "estimate":
        return float(config.dof_mode), float(config.dof_mode)
    if old_model is None:
        return _INIT_DOF, _INIT_DOF
    old = old_model.components[g]
    return (
        _solve_dof(old.x_marginal.dof, d, r, ux[:, g]),
        _solve_dof(old.y_conditional.dof, 1, r, uy[:, g]),
    )


def _m_step(data, z, config, resp, u, old_model):
    x, y = data.x, data.y
    d, G = data.d, config.G
    variant = config.variant
    mass = resp.sum(axis=0)
    if np.any(mass < d + 2):
        raise _DegenerateStart("cluster responsibility mass below d + 2")
    if config.equal_weights:
        weights = np.full(G, 1.0 / G)
    else:
        weights = mass / mass.sum()
    var_floor = _NOISE_VAR_FLOOR * (float(np.var(y)) + 1e-30)
    used_ridge = False
    comps = []
    for g in range(G):
        r = resp[:, g]
        if variant in ("gaussian_cwm", "t_cwm"):
            wx = r if u.x is None else r * u.x[:, g]
            mu = (wx[:, None] * x).sum(axis=0) / wx.sum()
            centered = x - mu
            cov = (wx[:, None] * centered).T @ centered / mass[g]
            cov, ridged = _regularize_cov(cov)
            used_ridge |= ridged
            wy = r if u.y is None else r * u.y[:, g]
            slope, intercept = _weighted_ls(x, y, wy)
            resid = y - (x @ slope + intercept)
            noise_var = float((wy * resid**2).sum() / mass[g])
            if not noise_var > var_floor:
                raise _DegenerateStart("collapsed noise variance")
            if variant == "gaussian_cwm":
                comps.append(Component(
                    weights[g],
                    GaussianParams(mu, cov),
                    Conditional(LinearMap(slope, intercept), math.sqrt(noise_var)),
                ))
            else:
                nu, zeta = _next_dofs(config, old_model, g, d, r, u.x, u.y)
                comps.append(Component(
                    weights[g],
                    StudentParams(mu, cov, nu),
                    Conditional(LinearMap(slope, intercept), math.sqrt(noise_var), dof=zeta),
                ))
        elif variant in ("fmg", "fmt"):
            w = r if u.x is None else r * u.x[:, g]
            center = (w[:, None] * z).sum(axis=0) / w.sum()
            centered = z - center
            scale = (w[:, None] * centered).T @ centered / mass[g]
            scale, ridged = _regularize_cov(scale)
            used_ridge |= ridged
            if variant == "fmg":
                comps.append(fmg_to_cwm(GaussianParams(center, scale), weights[g]))
            else:
                if config.dof_mode != "estimate":
                    nu = float(config.dof_mode)
                elif old_model is None:
                    nu = _INIT_DOF
                else:
                    nu = _solve_dof(old_model.components[g].x_marginal.dof, d + 1, r, u.x[:, g])
                slope = solve_spd(scale[:d, :d], scale[:d, d])
                intercept = float(center[d] - slope @ center[:d])
                schur = float(scale[d, d] - scale[:d, d] @ slope)
                comps.append(Component(
                    weights[g],
                    StudentParams(center[:d], scale[:d, :d], nu),
                    Conditional(LinearMap(slope, intercept), math.sqrt(schur), dof=nu + d),
                ))
        else:  # fmr, fmrc
            slope, intercept = _weighted_ls(x, y, r)
            resid = y - (x @ slope + intercept)
            noise_var = float((r * resid**2).sum() / mass[g])
            if not noise_var > var_floor:
                raise _DegenerateStart("collapsed noise variance")
            comps.append(Component(
                weights[g], None, Conditional(LinearMap(slope, intercept), math.sqrt(noise_var))
            ))
    gating = None
    if variant == "fmrc":
        old_gating = old_model.gating if old_model is not None else [Gating(np.zeros(d), 0.0)] * G
        gating = tuple(_fit_gating(x, resp, old_gating))
    return CwmModel(variant, tuple(comps), gating), used_ridge


# -------------------------------------------------------------------- driver

def _run_start(data, config, resp, start_index):
    x, y = data.x, data.y
    z = np.column_stack([x, y])
    model, ridged = _m_step(data, z, config, resp, _Weights(None, None), None)
    streak = 1 if ridged else 0
    trace = []
    converged = False
    for it in range(config.max_iter):
        terms = _log_component_terms(model, x, y)
        row_lse = log_sum_exp(terms, axis=1)
        loglik = float(row_lse.sum())
        if not math.isfinite(loglik):
            raise _DegenerateStart("non-finite log-likelihood")
        trace.append(loglik)
        resp = np.exp(terms - row_lse[:, None])
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / (1.0 + abs(trace[-1])) < config.rel_tol:
            converged = True
            break
        if it == config.max_iter - 1:
            break
        u = _latent_weights(model, x, y, z)
        model, ridged = _m_step(data, z, config, resp, u, model)
        streak = streak + 1 if ridged else 0
        if streak >= 3:
            raise _DegenerateStart("covariance required repeated regularization")
    return FitResult(
        model=model,
        loglik_trace=np.asarray(trace),
        responsibilities=resp,
        converged=converged,
        n_iter=len(trace),
        start_index=start_index,
    )


def fit(data: Dataset, config: FitConfig) -> FitResult:
    """Best-of-n-starts EM/ECM fit; ties go to the lowest start index."""
    if data.n <= config.G:
        raise ValueError("need more observations than groups")
    # given_labels is deterministic, so extra starts would be identical
    n_starts = 1 if config.init == "given_labels" else config.n_starts
    best = None
    failures = []
    for start in range(n_starts):
        rng = np.random.default_rng([config.seed, start])
        try:
            resp0 = initialize(data, config, rng)
            result = _run_start(data, config, resp0, start)
        except _DegenerateStart as exc:
            failures.append(f"start {start}: {exc}")
            continue
        if best is None or result.loglik_trace[-1] > best.loglik_trace[-1]:
            best = result
    if best is None:
        raise DegenerateFitError("; ".join(failures))
    return best
