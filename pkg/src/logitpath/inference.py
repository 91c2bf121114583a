"""Delta-method inference for scalar effect functionals of a fitted system.

One gradient engine serves every effect: central differences of the
functional over the full coefficient stack (per-coordinate step scaled to
the coefficient), then se = sqrt(g' Sigma g) with the block-diagonal
fitted covariance.  Wald intervals and two-sided normal p-values are
reported on the effect's own scale.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .effects import (EffectError, EffectRequest, _validate_request,
                      component_value, direct_mask, indirect_mask)
from .fitting import FittedSystem
from .model import ParameterSet
from .multi import (PathSpec, ZeroMask, marginal_logit_multi,
                    marginalize_inner, marginalize_outer_system)

STEP_SCALE = 1e-6


class InferenceError(RuntimeError):
    """Raised when a gradient cannot be evaluated."""


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate with delta-method uncertainty."""

    label: str
    value: float
    se: float
    ci: tuple
    p_value: float
    level: float = 0.95


def delta_se(fitted: FittedSystem, effect: Callable,
             level: float = 0.95, label: str = "effect") -> EffectEstimate:
    """Delta-method estimate of a scalar functional of the coefficients.

    ``effect`` maps a ParameterSet to a float; its gradient is taken by
    central differences with step 1e-6 * max(1, |coefficient|).
    """
    spec = fitted.spec
    theta = fitted.params.flatten()
    value = float(effect(fitted.params))
    if not math.isfinite(value):
        raise InferenceError(f"{label}: effect is not finite at the estimate")
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        h = STEP_SCALE * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        fu = float(effect(ParameterSet.from_vector(spec, up)))
        fd = float(effect(ParameterSet.from_vector(spec, dn)))
        if not (math.isfinite(fu) and math.isfinite(fd)):
            resp, col = spec.flat_coords[i]
            raise InferenceError(
                f"{label}: effect not finite when perturbing "
                f"{resp}:{spec.column_label(col)}")
        grad[i] = (fu - fd) / (2.0 * h)
    sigma = fitted.covariance_matrix()
    var = float(grad @ sigma @ grad)
    se = math.sqrt(max(var, 0.0))
    z = float(norm.ppf(0.5 + level / 2.0))
    ci = (value - z * se, value + z * se)
    if se > 0.0:
        p = float(2.0 * norm.sf(abs(value) / se))
    else:
        p = 1.0 if value == 0.0 else 0.0
    return EffectEstimate(label, value, se, ci, p, level)


# -- effect functionals ----------------------------------------------------

def component_functional(component: str, request: EffectRequest,
                         path: Optional[PathSpec] = None,
                         transform: Optional[Callable] = None) -> Callable:
    """Build the ParameterSet -> float map for one effect component.

    ``component`` is one of TE, DE, IE, GIE, RES, PSIE.  ``transform``
    optionally rewrites the parameters first (marginalize-then-decompose
    pipelines); masks are built on the transformed system, and gradients
    taken by the caller therefore flow through the transformation.
    """
    comp = component.upper()
    if comp == "PSIE" and path is None:
        raise EffectError("PSIE functional needs a path")

    def f(params: ParameterSet) -> float:
        p = transform(params) if transform is not None else params
        spec = p.spec
        _validate_request(spec, request)
        if comp == "TE":
            return component_value(p, request, None, marginal_logit_multi)
        if comp == "DE":
            return component_value(p, request, direct_mask(spec),
                                   marginal_logit_multi)
        if comp in ("IE", "GIE"):
            return component_value(p, request, indirect_mask(spec),
                                   marginal_logit_multi)
        if comp == "RES":
            te = component_value(p, request, None, marginal_logit_multi)
            de = component_value(p, request, direct_mask(spec),
                                 marginal_logit_multi)
            ie = component_value(p, request, indirect_mask(spec),
                                 marginal_logit_multi)
            return te - de - ie
        if comp == "PSIE":
            mask = ZeroMask.from_targets(spec, path.mask_targets(spec))
            return component_value(p, request, mask, marginal_logit_multi)
        raise EffectError(f"unknown effect component {component!r}")

    return f


def _component_names(spec, scale: str) -> Sequence:
    multi = len(spec.mediators) > 1
    if scale == "probability":
        return (("DPE", "DE"), ("GIPE" if multi else "IPE", "IE"),
                ("RPE", "RES"), ("TPE", "TE"))
    return (("DE", "DE"), ("GIE" if multi else "IE", "IE"),
            ("RES", "RES"), ("TE", "TE"))


@dataclass(frozen=True)
class EffectRow:
    effect: str
    contrast: str
    covariates: str
    estimate: EffectEstimate


@dataclass(frozen=True)
class EffectTable:
    rows: tuple

    def to_records(self) -> list:
        out = []
        for r in self.rows:
            e = r.estimate
            out.append({
                "effect": r.effect,
                "contrast": r.contrast,
                "covariates": r.covariates,
                "estimate": e.value,
                "se": e.se,
                "ci_low": e.ci[0],
                "ci_high": e.ci[1],
                "p_value": e.p_value,
            })
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_records(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["effect", "contrast", "covariates", "estimate", "se",
                  "ci_low", "ci_high", "p_value"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for rec in self.to_records():
            writer.writerow(rec)
        return buf.getvalue()

    def to_text(self) -> str:
        header = (f"{'effect':<10}{'contrast':<14}{'covariates':<14}"
                  f"{'estimate':>10}{'se':>9}{'ci95':>20}{'p':>9}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            e = r.estimate
            ci = f"({e.ci[0]:.3f}, {e.ci[1]:.3f})"
            lines.append(f"{r.effect:<10}{r.contrast:<14}{r.covariates:<14}"
                         f"{e.value:>10.3f}{e.se:>9.3f}{ci:>20}"
                         f"{e.p_value:>9.4f}")
        return "\n".join(lines)


def effect_table(fitted: FittedSystem, requests: Iterable[EffectRequest],
                 paths: Optional[Iterable] = None,
                 transform: Optional[Callable] = None,
                 level: float = 0.95) -> EffectTable:
    """One row per effect component and request, ordered DE, IE/GIE, RES,
    TE within each request, path-specific rows after."""
    target_spec = fitted.spec
    if transform is not None:
        target_spec = transform(fitted.params).spec
    rows = []
    for req in requests:
        for display, comp in _component_names(target_spec, req.scale):
            fn = component_functional(comp, req, transform=transform)
            label = f"{display} {req.label()}"
            if req.covariate_label():
                label += f" | {req.covariate_label()}"
            est = delta_se(fitted, fn, level=level, label=label)
            rows.append(EffectRow(display, req.label(),
                                  req.covariate_label(), est))
        for p in (paths or ()):
            ps = p if isinstance(p, PathSpec) else PathSpec.parse(p)
            fn = component_functional("PSIE", req, path=ps,
                                      transform=transform)
            disp = "PSIE[" + ",".join(str(i) for i in ps.indices) + "]"
            est = delta_se(fitted, fn, level=level,
                           label=f"{disp} {req.label()}")
            rows.append(EffectRow(disp, req.label(),
                                  req.covariate_label(), est))
    return EffectTable(tuple(rows))


def inner_transform(params: ParameterSet) -> ParameterSet:
    return marginalize_inner(params)


def outer_transform(params: ParameterSet) -> ParameterSet:
    return marginalize_outer_system(params)


def transform_fitted(fitted: FittedSystem, transform: Callable):
    """Push a parameter transformation through a fitted system.

    The reduced coefficients get their covariance by the delta method
    (jacobian of new stack w.r.t. old stack against the old block
    covariance).  Returns (reduced FittedSystem, cross) where ``cross`` is
    the largest absolute covariance between different reduced equations;
    the stored artifact keeps per-equation blocks only, so a nonzero
    ``cross`` means downstream standard errors from the artifact alone
    would miss that part.
    """
    new_params = transform(fitted.params)
    new_spec = new_params.spec
    theta = fitted.params.flatten()
    base = new_params.flatten()
    jac = np.zeros((len(base), len(theta)))
    for i in range(len(theta)):
        h = STEP_SCALE * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        fu = transform(ParameterSet.from_vector(fitted.spec, up)).flatten()
        fd = transform(ParameterSet.from_vector(fitted.spec, dn)).flatten()
        jac[:, i] = (fu - fd) / (2.0 * h)
    sigma = jac @ fitted.covariance_matrix() @ jac.T
    offsets = {}
    pos = 0
    for resp in new_spec.responses:
        width = len(new_spec.columns(resp))
        offsets[resp] = (pos, pos + width)
        pos += width
    cov_blocks = {}
    for resp, (a, b) in offsets.items():
        cov_blocks[resp] = sigma[a:b, a:b]
    cross = 0.0
    for r1, (a1, b1) in offsets.items():
        for r2, (a2, b2) in offsets.items():
            if r1 != r2:
                block = sigma[a1:b1, a2:b2]
                if block.size:
                    cross = max(cross, float(np.max(np.abs(block))))
    diagnostics = {resp: d for resp, d in fitted.diagnostics.items()
                   if resp in new_spec.equations
                   and new_spec.equations[resp] == fitted.spec.equations.get(resp)}
    return FittedSystem(new_spec, new_params, cov_blocks, diagnostics,
                        fitted.n), cross
