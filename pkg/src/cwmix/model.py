"""Cluster-weighted model family: joint density, posteriors, classification,
and the constructive maps between nested variants.

A model is a weighted list of components, each pairing an x-marginal law
(Gaussian, Student-t, or absent) with a linear conditional law for y given x.
The ``variant`` tag selects how the pieces combine:

    gaussian_cwm  pi_g * N(x) * N(y | b'x + b0)
    t_cwm         pi_g * t(x) * t(y | b'x + b0)
    fmg           joint-Gaussian mixture in CWM form (same evaluation as above)
    fmt           joint-t mixture in decomposed form; the conditional scale
                  depends on x and the conditional dof is tied to nu + d
    fmr           pi_g * N(y | b'x + b0)            (no x-marginal)
    fmrc          gate_g(x) * N(y | b'x + b0)       (logistic gating on x)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import (
    GaussianParams,
    StudentParams,
    gaussian_logpdf,
    log_gamma,
    log_sum_exp,
    mahalanobis_sq,
    solve_spd,
    student_logpdf,
)

#: Label value reserved for points that belong to no group.
NOISE = 0

VARIANTS = ("gaussian_cwm", "t_cwm", "fmg", "fmt", "fmr", "fmrc")

#: Variants whose components carry no x-marginal.
CONDITIONAL_VARIANTS = ("fmr", "fmrc")


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Affine map x -> slope @ x + intercept."""

    slope: np.ndarray
    intercept: float

    def __post_init__(self):
        slope = np.atleast_1d(np.asarray(self.slope, dtype=float))
        if slope.ndim != 1:
            raise ValueError("slope must be a vector")
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "intercept", float(self.intercept))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.slope + self.intercept


@dataclass(frozen=True, eq=False)
class Conditional:
    """Conditional law of y given x: ``map`` gives the center, ``noise_scale``
    the standard-deviation-like scale, and ``dof`` (when present) makes the
    law Student-t instead of Gaussian."""

    map: LinearMap
    noise_scale: float
    dof: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "noise_scale", float(self.noise_scale))
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.dof is not None:
            object.__setattr__(self, "dof", float(self.dof))
            if self.dof <= 0:
                raise ValueError("dof must be positive")


@dataclass(frozen=True, eq=False)
class Component:
    """One mixture component: weight, x-marginal (None for fmr/fmrc), and
    conditional law of y given x."""

    weight: float
    x_marginal: GaussianParams | StudentParams | None
    y_conditional: Conditional

    def __post_init__(self):
        object.__setattr__(self, "weight", float(self.weight))
        if not 0 < self.weight <= 1:
            raise ValueError("weight must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class Gating:
    """Multinomial-logistic gating parameters for one component."""

    w: np.ndarray
    w0: float

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w0", float(self.w0))


@dataclass(frozen=True, eq=False)
class CwmModel:
    variant: str
    components: tuple[Component, ...]
    gating: tuple[Gating, ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        comps = tuple(self.components)
        if not comps:
            raise ValueError("at least one component required")
        object.__setattr__(self, "components", comps)
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total!r}, not 1")
        d = comps[0].y_conditional.map.slope.shape[0]
        for c in comps:
            if c.y_conditional.map.slope.shape[0] != d:
                raise ValueError("components disagree on x dimension")
            self._check_component(c, d)
        if self.variant == "fmrc":
            if self.gating is None:
                raise ValueError("fmrc requires gating parameters")
            gating = tuple(self.gating)
            if len(gating) != len(comps):
                raise ValueError("one gating entry per component required")
            first = gating[0]
            if np.max(np.abs(first.w)) > 1e-12 or abs(first.w0) > 1e-12:
                raise ValueError("first component is the gating baseline; "
                                 "its parameters must be zero")
            for g in gating:
                if g.w.shape[0] != d:
                    raise ValueError("gating dimension mismatch")
            object.__setattr__(self, "gating", gating)
        elif self.gating is not None:
            raise ValueError("gating is only meaningful for fmrc")

    def _check_component(self, c: Component, d: int) -> None:
        marg, cond = c.x_marginal, c.y_conditional
        if self.variant in CONDITIONAL_VARIANTS:
            if marg is not None:
                raise ValueError(f"{self.variant} components carry no x-marginal")
            if cond.dof is not None:
                raise ValueError(f"{self.variant} conditionals are Gaussian")
            return
        if marg is None:
            raise ValueError(f"{self.variant} components require an x-marginal")
        if marg.dim != d:
            raise ValueError("x-marginal dimension mismatch")
        if self.variant in ("gaussian_cwm", "fmg"):
            if not isinstance(marg, GaussianParams) or cond.dof is not None:
                raise ValueError(f"{self.variant} requires Gaussian laws")
        else:  # t_cwm, fmt
            if not isinstance(marg, StudentParams) or cond.dof is None:
                raise ValueError(f"{self.variant} requires Student-t laws")
            if self.variant == "fmt" and abs(cond.dof - (marg.dof + d)) > 1e-8:
                raise ValueError(
                    "fmt ties the conditional dof to marginal dof + d "
                    f"({marg.dof} + {d}), got {cond.dof}"
                )

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].y_conditional.map.slope.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations (x, y) with optional integer group labels (NOISE allowed)."""

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ValueError("x must be N-by-d with one y per row")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in data")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int).ravel()
            if labels.shape[0] != y.shape[0]:
                raise ValueError("labels length mismatch")
            if np.any(labels < NOISE):
                raise ValueError("labels must be group indices or NOISE")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


# --------------------------------------------------------------- evaluation

def _as_batch(model: CwmModel, x, y):
    """Normalize (x, y) to matching batch arrays; flag scalar input."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    xb = x[None, :] if scalar else x
    if xb.ndim != 2 or xb.shape[1] != model.d:
        raise ValueError(f"x must have {model.d} columns")
    yb = np.atleast_1d(np.asarray(y, dtype=float))
    if yb.shape[0] != xb.shape[0]:
        raise ValueError("x and y lengths disagree")
    return xb, yb, scalar


def _student1d_logpdf(resid, scale_sq, dof):
    """Univariate t log-density of a residual; scale_sq may vary per point."""
    half = 0.5 * (dof + 1.0)
    return (
        log_gamma(half)
        - log_gamma(0.5 * dof)
        + 0.5 * dof * math.log(dof)
        - 0.5 * (math.log(math.pi) + np.log(scale_sq))
        - half * np.log(dof + resid**2 / scale_sq)
    )


def _log_component_terms(model: CwmModel, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
    """N-by-G matrix of log(weight_g * density_g) at each observation."""
    n = xb.shape[0]
    out = np.empty((n, model.G))
    if model.variant == "fmrc":
        logits = np.stack([xb @ g.w + g.w0 for g in model.gating], axis=1)
        log_weight = logits - log_sum_exp(logits, axis=1)[:, None]
    for g, comp in enumerate(model.components):
        cond = comp.y_conditional
        resid = yb - cond.map(xb)
        scale_sq = cond.noise_scale**2
        if cond.dof is None:
            ll = -0.5 * (math.log(2 * math.pi * scale_sq) + resid**2 / scale_sq)
        else:
            if model.variant == "fmt":
                # joint-t factorization: conditional scale grows with the
                # marginal Mahalanobis distance of x
                nu = comp.x_marginal.dof
                delta = mahalanobis_sq(xb, comp.x_marginal)
                scale_sq = scale_sq * (nu + delta) / (nu + model.d)
            ll = _student1d_logpdf(resid, scale_sq, cond.dof)
        if comp.x_marginal is not None:
            if isinstance(comp.x_marginal, StudentParams):
                ll = ll + student_logpdf(xb, comp.x_marginal)
            else:
                ll = ll + gaussian_logpdf(xb, comp.x_marginal)
        if model.variant == "fmrc":
            out[:, g] = log_weight[:, g] + ll
        else:
            out[:, g] = math.log(comp.weight) + ll
    return out


def joint_logpdf(model: CwmModel, x, y):
    """Log mixture density at (x, y); conditional-only for fmr/fmrc.

    Accepts a single point (x: vector(d), y: scalar) or a batch
    (x: N-by-d, y: vector(N)).
    """
    xb, yb, scalar = _as_batch(model, x, y)
    values = log_sum_exp(_log_component_terms(model, xb, yb), axis=1)
    return float(values[0]) if scalar else values


def posterior(model: CwmModel, x, y):
    """Posterior membership probabilities, one row per observation."""
    xb, yb, scalar = _as_batch(model, x, y)
    terms = _log_component_terms(model, xb, yb)
    prob = np.exp(terms - log_sum_exp(terms, axis=1)[:, None])
    return prob[0] if scalar else prob


def classify(model: CwmModel, data: Dataset) -> np.ndarray:
    """Maximum-posterior group index per observation; ties go to the lowest index."""
    prob = posterior(model, data.x, data.y)
    return np.argmax(prob, axis=1) + 1


# ----------------------------------------------------------- nesting maps

def fmg_to_cwm(joint: GaussianParams, weight: float) -> Component:
    """Rewrite a (d+1)-variate Gaussian as a CWM component over (x, y).

    The last coordinate is the response:
    b = Sigma_xx^-1 Sigma_xy, b0 = mu_y - b'mu_x,
    noise variance = sigma_y^2 - Sigma_yx Sigma_xx^-1 Sigma_xy.
    The joint density is preserved pointwise.
    """
    if joint.dim < 2:
        raise ValueError("need at least one covariate and one response")
    mean, cov = joint.mean, joint.cov
    sxx, sxy = cov[:-1, :-1], cov[:-1, -1]
    slope = solve_spd(sxx, sxy)
    intercept = float(mean[-1] - slope @ mean[:-1])
    noise_var = float(cov[-1, -1] - sxy @ slope)
    if noise_var <= 0:
        raise ValueError("joint covariance is not positive-definite")
    return Component(
        weight,
        GaussianParams(mean[:-1], sxx),
        Conditional(LinearMap(slope, intercept), math.sqrt(noise_var)),
    )


def t_conditional_decompose(joint: StudentParams, split: int):
    """Split a q-variate t into (marginal over the first ``split`` coords,
    conditional-law factory for the rest).

    The marginal keeps dof nu; the conditional at z1 has dof nu + split and
    scale ((nu + delta(z1)) / (nu + split)) times the Schur complement.
    """
    q = joint.dim
    if not 1 <= split < q:
        raise ValueError(f"split must lie in [1, {q - 1}]")
    loc, scale, nu = joint.location, joint.scale, joint.dof
    s11 = scale[:split, :split]
    s12 = scale[:split, split:]
    marginal = StudentParams(loc[:split], s11, nu)
    beta = solve_spd(s11, s12)
    schur = scale[split:, split:] - s12.T @ beta
    schur = 0.5 * (schur + schur.T)  # keep exactly symmetric for Cholesky

    def conditional(z1) -> StudentParams:
        z1 = np.asarray(z1, dtype=float)
        delta = mahalanobis_sq(z1, marginal)
        center = loc[split:] + beta.T @ (z1 - loc[:split])
        return StudentParams(center, ((nu + delta) / (nu + split)) * schur, nu + split)

    return marginal, conditional


def check_fmr_reduction(model: CwmModel) -> bool:
    """True iff every component shares one x-marginal, so the joint posterior
    reduces to the plain mixture-of-regressions posterior."""
    if model.variant != "gaussian_cwm":
        raise ValueError("reduction check applies to gaussian_cwm models")
    ref = model.components[0].x_marginal
    for comp in model.components[1:]:
        marg = comp.x_marginal
        if np.max(np.abs(marg.mean - ref.mean)) > 1e-10:
            return False
        if np.max(np.abs(marg.cov - ref.cov)) > 1e-10:
            return False
    return True


def cwm_to_fmrc_gating(model: CwmModel) -> list[Gating]:
    """Gating parameters reproducing the x-posterior of a common-covariance,
    equal-weight Gaussian CWM: w_g = Sigma^-1 (mu_g - mu_1) against baseline 1,
    w_g0 = -(mu_g + mu_1)' Sigma^-1 (mu_g - mu_1) / 2."""
    if model.variant != "gaussian_cwm":
        raise ValueError("gating extraction applies to gaussian_cwm models")
    comps = model.components
    sigma = comps[0].x_marginal.cov
    for comp in comps[1:]:
        if np.max(np.abs(comp.x_marginal.cov - sigma)) > 1e-10:
            raise ValueError("gating extraction requires a common covariance")
    weights = [c.weight for c in comps]
    if max(weights) - min(weights) > 1e-12:
        raise ValueError("gating extraction requires equal mixing weights")
    mu1 = comps[0].x_marginal.mean
    gating = [Gating(np.zeros(model.d), 0.0)]
    for comp in comps[1:]:
        mu = comp.x_marginal.mean
        w = solve_spd(sigma, mu - mu1)
        gating.append(Gating(w, -0.5 * float((mu + mu1) @ w)))
    return gating


def check_degenerate_conditional(model: CwmModel) -> bool:
    """True iff all components share one conditional law (slope, intercept,
    noise variance), so f(y|x) collapses to a single regression line."""
    ref = model.components[0].y_conditional
    for comp in model.components[1:]:
        cond = comp.y_conditional
        if np.max(np.abs(cond.map.slope - ref.map.slope)) > 1e-10:
            return False
        if abs(cond.map.intercept - ref.map.intercept) > 1e-10:
            return False
        if abs(cond.noise_scale**2 - ref.noise_scale**2) > 1e-10:
            return False
    return True


# -------------------------------------------------------------- serialization

def model_to_dict(model: CwmModel) -> dict:
    """JSON-ready dict; numbers keep full double precision."""
    components = []
    for comp in model.components:
        marg = None
        if comp.x_marginal is not None:
            if isinstance(comp.x_marginal, StudentParams):
                marg = {
                    "mean": comp.x_marginal.location.tolist(),
                    "cov": comp.x_marginal.scale.tolist(),
                    "dof": comp.x_marginal.dof,
                }
            else:
                marg = {
                    "mean": comp.x_marginal.mean.tolist(),
                    "cov": comp.x_marginal.cov.tolist(),
                }
        cond = comp.y_conditional
        y_conditional = {
            "slope": cond.map.slope.tolist(),
            "intercept": cond.map.intercept,
            "noise_var": cond.noise_scale**2,
        }
        if cond.dof is not None:
            y_conditional["dof"] = cond.dof
        components.append(
            {"weight": comp.weight, "x_marginal": marg, "y_conditional": y_conditional}
        )
    out = {
        "variant": model.variant,
        "d": model.d,
        "G": model.G,
        "components": components,
    }
    if model.gating is not None:
        out["gating"] = [{"w": g.w.tolist(), "w0": g.w0} for g in model.gating]
    return out


def model_from_dict(doc: dict) -> CwmModel:
    """Inverse of model_to_dict; validates through the CwmModel constructor."""
    components = []
    for entry in doc["components"]:
        marg = None
        m = entry["x_marginal"]
        if m is not None:
            mean = np.asarray(m["mean"], dtype=float)
            cov = np.asarray(m["cov"], dtype=float)
            marg = StudentParams(mean, cov, float(m["dof"])) if "dof" in m else GaussianParams(mean, cov)
        yc = entry["y_conditional"]
        cond = Conditional(
            LinearMap(np.asarray(yc["slope"], dtype=float), float(yc["intercept"])),
            math.sqrt(float(yc["noise_var"])),
            dof=float(yc["dof"]) if "dof" in yc else None,
        )
        components.append(Component(float(entry["weight"]), marg, cond))
    gating = None
    if "gating" in doc:
        gating = tuple(Gating(np.asarray(g["w"], dtype=float), float(g["w0"])) for g in doc["gating"])
    return CwmModel(doc["variant"], tuple(components), gating)
