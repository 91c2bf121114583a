"""Single-mediator effect decomposition on the log-odds and probability scales.

For the system  Y ~ X, W (+C);  W ~ X (+C)  with binary Y and W, the log
odds of Y given X alone (W summed out) has the closed form

    eta(x) = log[(1 + exp g1(x)) / (1 + exp g0(x))] + rhs(Y | W=0, x)

where g_y(x) is the log odds of W=1 given Y=y and X=x,

    g_y(x) = y * {rhs(Y|W=1,x) - rhs(Y|W=0,x)}
             + log[(1 + exp rhs(Y|W=0,x)) / (1 + exp rhs(Y|W=1,x))]
             + rhs(W|x),

with covariates entering every rhs unchanged.  Every effect component is a
contrast (or derivative, via dual numbers) of eta under a coefficient mask:

    TE   no mask
    DE   mediator zeroed out of the outcome equation
    IE   treatment zeroed out of the outcome equation
    RES  TE - DE - IE

Probability-scale components apply the same masks inside expit(eta).
The residual is the non-collapsibility term; it vanishes in linear models
but not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .dual import Dual, expit, softplus
from .fitting import DataError, Dataset, coerce_column
from .model import ParameterSet, SystemSpec, ZeroMask, zero_out

SCALES = ("logodds", "probability")


class EffectError(ValueError):
    """An effect request that does not fit the system at hand."""


def _single_mediator(spec: SystemSpec):
    meds = spec.mediators
    if len(meds) != 1:
        raise EffectError(
            f"single-mediator decomposition needs exactly one mediator, "
            f"system has {len(meds)}; use the multi-mediator variant")
    return meds[0]


def _parts(params: ParameterSet, x, covariates):
    spec = params.spec
    med = _single_mediator(spec)
    base = {spec.treatment.name: x}
    if covariates:
        base.update(covariates)
    r1 = params.linear_predictor(spec.outcome.name, {**base, med.name: 1.0})
    r0 = params.linear_predictor(spec.outcome.name, {**base, med.name: 0.0})
    rw = params.linear_predictor(med.name, base)
    return r0, r1, rw


def g_y(params: ParameterSet, y: int, x, covariates: Optional[Mapping] = None):
    """Log odds of W=1 given Y=y and X=x (and covariates)."""
    if y not in (0, 1):
        raise EffectError("y must be 0 or 1")
    r0, r1, rw = _parts(params, x, covariates)
    return y * (r1 - r0) + softplus(r0) - softplus(r1) + rw


def marginal_logit(params: ParameterSet, x,
                   covariates: Optional[Mapping] = None):
    """Log odds of Y=1 given X=x (and covariates) with W summed out."""
    r0, r1, rw = _parts(params, x, covariates)
    g1 = (r1 - r0) + softplus(r0) - softplus(r1) + rw
    g0 = softplus(r0) - softplus(r1) + rw
    return softplus(g1) - softplus(g0) + r0


def deltas(params: ParameterSet, x, covariates: Optional[Mapping] = None):
    """(delta_y, delta_w, delta_w_star) at X=x.

    delta_y: P(Y=1|W=1,x) - P(Y=1|W=0,x)
    delta_w: P(W=1|Y=1,x) - P(W=1|Y=0,x)
    delta_w_star: delta_w recomputed with the treatment zeroed out of the
    outcome equation.
    """
    spec = params.spec
    r0, r1, rw = _parts(params, x, covariates)
    dy = expit(r1) - expit(r0)
    g1 = (r1 - r0) + softplus(r0) - softplus(r1) + rw
    g0 = softplus(r0) - softplus(r1) + rw
    dw = expit(g1) - expit(g0)
    starred = zero_out(params, [(spec.outcome.name, spec.treatment.name)])
    s0, s1, sw = _parts(starred, x, covariates)
    h1 = (s1 - s0) + softplus(s0) - softplus(s1) + sw
    h0 = softplus(s0) - softplus(s1) + sw
    dws = expit(h1) - expit(h0)
    return dy, dw, dws


# -- requests and masks ----------------------------------------------------

@dataclass(frozen=True)
class EffectRequest:
    """What to evaluate: a contrast x1 vs x0 or a derivative at a point,
    at a fixed covariate setting, on one scale."""

    mode: str
    x1: object = None
    x0: object = None
    at: object = None
    covariates: Mapping = field(default_factory=dict)
    scale: str = "logodds"

    def __post_init__(self):
        if self.mode not in ("contrast", "derivative"):
            raise EffectError(f"unknown mode {self.mode!r}")
        if self.scale not in SCALES:
            raise EffectError(f"unknown scale {self.scale!r}")
        if self.mode == "contrast":
            if self.x1 is None or self.x0 is None:
                raise EffectError("contrast mode needs x1 and x0")
            if self.x1 == self.x0:
                raise EffectError("contrast endpoints must differ")
        else:
            if self.at is None:
                raise EffectError("derivative mode needs an evaluation point")

    @staticmethod
    def contrast(x1, x0, covariates=None, scale="logodds") -> "EffectRequest":
        return EffectRequest("contrast", x1=x1, x0=x0,
                             covariates=dict(covariates or {}), scale=scale)

    @staticmethod
    def derivative(at, covariates=None, scale="logodds") -> "EffectRequest":
        return EffectRequest("derivative", at=at,
                             covariates=dict(covariates or {}), scale=scale)

    def with_scale(self, scale: str) -> "EffectRequest":
        return replace(self, scale=scale)

    def label(self) -> str:
        if self.mode == "contrast":
            return f"{self.x1} vs {self.x0}"
        return f"d/dx at {self.at}"

    def covariate_label(self) -> str:
        if not self.covariates:
            return ""
        return ", ".join(f"{k}={v}" for k, v in sorted(self.covariates.items()))


def direct_mask(spec: SystemSpec) -> ZeroMask:
    """Zero every mediator out of the outcome equation."""
    y = spec.outcome.name
    return ZeroMask.from_targets(spec, [(y, m.name) for m in spec.mediators])


def indirect_mask(spec: SystemSpec) -> ZeroMask:
    """Zero the treatment out of the outcome equation."""
    return ZeroMask.from_targets(spec, [(spec.outcome.name, spec.treatment.name)])


def _validate_request(spec: SystemSpec, request: EffectRequest):
    kind = spec.treatment.kind
    if request.mode == "derivative" and kind != "continuous":
        raise EffectError("derivative mode requires a continuous treatment")
    if request.mode == "contrast" and kind == "categorical":
        levels = spec.treatment.levels
        for v in (request.x1, request.x0):
            if v not in levels:
                raise EffectError(
                    f"{v!r} is not a level of {spec.treatment.name!r}")


def component_value(params: ParameterSet, request: EffectRequest,
                    mask: Optional[ZeroMask] = None,
                    logit_fn: Callable = marginal_logit) -> float:
    """One effect component: contrast or derivative of the (masked)
    marginal logit, or of its expit on the probability scale."""
    masked = mask.apply(params) if mask is not None else params
    covs = dict(request.covariates)
    if request.mode == "contrast":
        a = logit_fn(masked, request.x1, covs)
        b = logit_fn(masked, request.x0, covs)
        if request.scale == "probability":
            return expit(a) - expit(b)
        return a - b
    xd = Dual(request.at, 1.0)
    e = logit_fn(masked, xd, covs)
    if request.scale == "probability":
        e = expit(e)
    # a fully masked treatment can leave a plain float: derivative is 0
    return e.dot if isinstance(e, Dual) else 0.0


@dataclass(frozen=True)
class Decomposition:
    """TE = DE + IE + RES on one scale, for one contrast or derivative point."""

    request: EffectRequest
    scale: str
    total: float
    direct: float
    indirect: float
    residual: float
    indirect_name: str = "IE"

    def components(self) -> dict:
        prob = self.scale == "probability"
        names = (("TPE", "DPE", "IPE", "RPE") if prob
                 else ("TE", "DE", self.indirect_name, "RES"))
        if prob and self.indirect_name == "GIE":
            names = ("TPE", "DPE", "GIPE", "RPE")
        return dict(zip(names, (self.total, self.direct,
                                self.indirect, self.residual)))

    def mediated_share(self):
        """(indirect/total, residual-nonzero flag).  The share is only a
        clean proportion when the residual is zero; the flag says so."""
        ratio = self.indirect / self.total if self.total != 0.0 else float("nan")
        return ratio, bool(abs(self.residual) > 1e-12)


def decompose(params: ParameterSet, request: EffectRequest,
              logit_fn: Callable = marginal_logit,
              indirect_name: str = "IE") -> Decomposition:
    spec = params.spec
    _validate_request(spec, request)
    te = component_value(params, request, None, logit_fn)
    de = component_value(params, request, direct_mask(spec), logit_fn)
    ie = component_value(params, request, indirect_mask(spec), logit_fn)
    return Decomposition(request, request.scale, te, de, ie,
                         te - de - ie, indirect_name)


def decompose_logodds(params: ParameterSet,
                      request: EffectRequest) -> Decomposition:
    """Single-mediator decomposition of the log-odds total effect."""
    _single_mediator(params.spec)
    return decompose(params, request.with_scale("logodds"))


def decompose_probability(params: ParameterSet,
                          request: EffectRequest) -> Decomposition:
    """Single-mediator decomposition on the probability scale."""
    _single_mediator(params.spec)
    return decompose(params, request.with_scale("probability"))


def average_probability_effects(params: ParameterSet, data: Dataset):
    """(ATPE, ADPE, AIPE): count-weighted means of the per-unit local
    probability effects, treatment derivative taken at each unit's x."""
    spec = params.spec
    if spec.treatment.kind != "continuous":
        raise EffectError("average probability effects need a continuous treatment")
    if data.nrows == 0 or data.n == 0:
        raise DataError("empty data")
    x_name = spec.treatment.name
    needed = set()
    for resp in spec.responses:
        needed |= spec.predictors(resp)
    needed -= {x_name}
    needed -= {m.name for m in spec.mediators}
    if x_name not in data.columns:
        raise DataError(f"data has no column {x_name!r}")
    xs = coerce_column(spec.variable(x_name), data.columns[x_name])
    covs = {}
    for name in sorted(needed):
        if name not in data.columns:
            raise DataError(f"data has no column {name!r}")
        covs[name] = coerce_column(spec.variable(name), data.columns[name])
    w = np.asarray(data.counts, dtype=float)
    tot = np.zeros(3)
    for i in range(data.nrows):
        if w[i] == 0.0:
            continue
        setting = {k: v[i] for k, v in covs.items()}
        req = EffectRequest.derivative(float(xs[i]), setting, "probability")
        d = decompose(params, req)
        tot += w[i] * np.array([d.total, d.direct, d.indirect])
    atpe, adpe, aipe = tot / np.sum(w)
    return float(atpe), float(adpe), float(aipe)
