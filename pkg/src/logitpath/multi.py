"""Multi-mediator marginalization, global and path-specific effects.

Mediators are summed out innermost-first.  The recursion keeps a working
log-odds function for Y rather than a working coefficient vector: step j
turns R_{j-1}(w_j, ..., w_k), the log odds of Y with W_1..W_{j-1} already
removed, into

    R_j(w_{j+1}, ..., w_k) = R_{j-1}(W_j=0, w_{>j})
                             + log[(1+exp g1) / (1+exp g0)]

with g_y the log odds of W_j=1 given Y=y and everything still conditioned
on, built from R_{j-1} and W_j's own equation.  Evaluating R_k() gives the
marginal logit of Y given X (and covariates) exactly, for any treatment
kind, and dual-number inputs ride through for derivatives.

Effect components are masked versions of that marginal logit:

    DE   every mediator zeroed out of the outcome equation
    GIE  treatment zeroed out of the outcome equation
    RES  TE - DE - GIE
    PSIE treatment rerouted through one ordered mediator path by zeroing
         every coefficient not on the path (four rule groups below)

Inner and outer mediator removal (``marginalize_inner``,
``marginalize_outer``) rebuild explicit reduced systems; their coefficient
extraction solves an exact corner-point system, which is only exact when
the remaining predictors are discrete, so those two operations refuse
continuous treatments or covariates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .dual import softplus
from .effects import (EffectError, EffectRequest, Decomposition,
                      component_value, decompose, _validate_request)
from .model import (ParameterSet, SystemSpec, Term, ZeroMask,
                    column_value)


def _working(params: ParameterSet, x, covariates, upto: Optional[int]):
    """Working log-odds closure with the first ``upto`` mediators removed."""
    spec = params.spec
    base = {spec.treatment.name: x}
    if covariates:
        base.update(covariates)

    def r_base(w):
        return params.linear_predictor(spec.outcome.name, {**base, **w})

    r = r_base
    for med in spec.mediators[:upto]:
        r = _lift(params, r, med.name, base)
    return r, base


def _lift(params: ParameterSet, r_prev: Callable, med_name: str, base: Mapping):
    def r_next(w_above):
        r0 = r_prev({**w_above, med_name: 0.0})
        r1 = r_prev({**w_above, med_name: 1.0})
        rw = params.linear_predictor(med_name, {**base, **w_above})
        core = softplus(r0) - softplus(r1) + rw
        g1 = (r1 - r0) + core
        g0 = core
        return softplus(g1) - softplus(g0) + r0
    return r_next


def g_recursive(params: ParameterSet, j: int, y: int, x,
                w_above: Optional[Mapping] = None,
                covariates: Optional[Mapping] = None):
    """Log odds of W_j=1 given Y=y, X=x and W_{>j}, with W_{<j} summed out.

    ``w_above`` maps the names of the outer mediators W_{j+1}..W_k to 0/1
    values; it can be omitted when nothing outward of j is referenced.
    """
    meds = params.spec.mediators
    if not 1 <= j <= len(meds):
        raise EffectError(f"mediator index {j} out of range 1..{len(meds)}")
    if y not in (0, 1):
        raise EffectError("y must be 0 or 1")
    r, base = _working(params, x, covariates, j - 1)
    med = meds[j - 1]
    wab = dict(w_above or {})
    r0 = r({**wab, med.name: 0.0})
    r1 = r({**wab, med.name: 1.0})
    rw = params.linear_predictor(med.name, {**base, **wab})
    return y * (r1 - r0) + softplus(r0) - softplus(r1) + rw


def marginal_logit_multi(params: ParameterSet, x,
                         covariates: Optional[Mapping] = None):
    """Log odds of Y=1 given X=x (and covariates), all mediators summed out."""
    r, _ = _working(params, x, covariates, None)
    return r({})


def decompose_multi(params: ParameterSet,
                    request: EffectRequest) -> Decomposition:
    """TE / DE / GIE / RES decomposition for any number of mediators."""
    spec = params.spec
    if not spec.mediators:
        raise EffectError("system declares no mediators")
    name = "GIE" if len(spec.mediators) > 1 else "IE"
    return decompose(params, request, logit_fn=marginal_logit_multi,
                     indirect_name=name)


def residual_structurally_zero(spec: SystemSpec) -> bool:
    """True when the residual component is identically zero by structure:
    the treatment is not a parent of the outcome, or no mediator is."""
    ypreds = spec.predictors(spec.outcome.name)
    if spec.treatment.name not in ypreds:
        return True
    return not any(m.name in ypreds for m in spec.mediators)


@dataclass(frozen=True)
class PathSpec:
    """An ordered mediator path X -> W_{i_r} -> ... -> W_{i_1} -> Y.

    Stored as strictly increasing indices (innermost first).  Input
    sequences may run in either direction; a non-monotone sequence would
    have to pass through a collider, where the path is blocked, and is
    rejected.
    """

    indices: tuple

    @staticmethod
    def parse(seq) -> "PathSpec":
        try:
            t = tuple(int(i) for i in seq)
        except (TypeError, ValueError):
            raise EffectError(f"cannot read path indices from {seq!r}") from None
        if not t:
            raise EffectError("a path needs at least one mediator index")
        if len(set(t)) != len(t):
            raise EffectError(f"repeated mediator index in path {list(t)}")
        increasing = all(a < b for a, b in zip(t, t[1:]))
        decreasing = all(a > b for a, b in zip(t, t[1:]))
        if not (increasing or decreasing):
            raise EffectError(
                f"path {list(t)} is not an ordered traversal: mediator "
                f"indices must be strictly monotone, otherwise the walk "
                f"runs into a collider and the path is blocked")
        return PathSpec(tuple(sorted(t)))

    def mask_targets(self, spec: SystemSpec) -> list:
        """The (equation, variable) zeroing plan that isolates this path.

        Four groups: the direct treatment arrow into Y; every mediator
        arrow into Y except the path's innermost; within each path
        mediator's equation, every more-outward mediator except the path
        successor; and the treatment arrow into every path mediator
        except the outermost.
        """
        meds = spec.mediators
        k = len(meds)
        for i in self.indices:
            if not 1 <= i <= k:
                raise EffectError(f"path index {i} out of range 1..{k}")
        name = {m.mediator_index: m.name for m in meds}
        y = spec.outcome.name
        x = spec.treatment.name
        lo, hi = self.indices[0], self.indices[-1]
        successor = {a: b for a, b in zip(self.indices, self.indices[1:])}
        targets = [(y, x)]
        for m in meds:
            if m.mediator_index != lo:
                targets.append((y, m.name))
        for r in self.indices:
            for j in range(r + 1, k + 1):
                if r == hi or j != successor.get(r):
                    targets.append((name[r], name[j]))
            if r != hi:
                targets.append((name[r], x))
        return targets


def psie(params: ParameterSet, path, request: EffectRequest) -> float:
    """Path-specific indirect effect: the total effect left after zeroing
    every coefficient not pertaining to the path."""
    spec = params.spec
    if not isinstance(path, PathSpec):
        path = PathSpec.parse(path)
    _validate_request(spec, request)
    mask = ZeroMask.from_targets(spec, path.mask_targets(spec))
    return component_value(params, request, mask, marginal_logit_multi)


# -- explicit mediator removal ---------------------------------------------

def _discrete_axes(spec: SystemSpec, names):
    axes = []
    for n in names:
        var = spec.variable(n)
        if var.kind == "categorical":
            axes.append(tuple(var.levels))
        elif var.kind == "binary":
            axes.append((0.0, 1.0))
        else:
            raise EffectError(
                f"explicit marginalization needs discrete predictors; "
                f"{n!r} is continuous (pointwise evaluators have no such limit)")
    return axes


def _extract_equation(new_spec: SystemSpec, response: str, names,
                      value_fn: Callable) -> dict:
    """Solve for the column coefficients reproducing ``value_fn`` on the
    full grid of discrete predictor corners.  Exact: the tensor-product
    dummy basis spans every function on that grid."""
    axes = _discrete_axes(new_spec, names)
    grid = list(itertools.product(*axes)) if names else [()]
    cols = new_spec.columns(response)
    design = np.array([[column_value(c, dict(zip(names, combo))) for c in cols]
                       for combo in grid])
    vals = np.array([value_fn(dict(zip(names, combo))) for combo in grid])
    coefs = np.linalg.solve(design, vals)
    return {(response, c): float(b) for c, b in zip(cols, coefs)}


def _full_basis(names) -> tuple:
    terms = []
    ordered = list(names)
    for r in range(len(ordered) + 1):
        for sub in itertools.combinations(ordered, r):
            terms.append(Term(frozenset(sub)))
    return tuple(terms)


def marginalize_inner(params: ParameterSet) -> ParameterSet:
    """Sum the innermost mediator out of the system exactly.

    Returns the parameters of the reduced system (spec attached), whose
    outcome equation carries the full interaction basis over the remaining
    outcome predictors: marginalization fills in interactions even when
    the original model had none.
    """
    spec = params.spec
    meds = spec.mediators
    if len(meds) < 2:
        raise EffectError("inner marginalization needs at least two mediators")
    w1 = meds[0]
    y = spec.outcome.name
    rem = sorted((spec.predictors(y) | spec.predictors(w1.name)) - {w1.name},
                 key=spec.position)
    new_vars = []
    for v in spec.variables:
        if v.name == w1.name:
            continue
        if v.role == "mediator":
            new_vars.append(replace(v, mediator_index=v.mediator_index - 1))
        else:
            new_vars.append(v)
    new_eqs = {y: _full_basis(rem)}
    for resp, ts in spec.equations.items():
        if resp not in (y, w1.name):
            new_eqs[resp] = ts
    new_spec = SystemSpec(tuple(new_vars), new_eqs).require_valid()

    def value_fn(assign):
        r0 = params.linear_predictor(y, {**assign, w1.name: 0.0})
        r1 = params.linear_predictor(y, {**assign, w1.name: 1.0})
        rw = params.linear_predictor(w1.name, assign)
        core = softplus(r0) - softplus(r1) + rw
        return softplus((r1 - r0) + core) - softplus(core) + r0

    updates = _extract_equation(new_spec, y, rem, value_fn)
    for resp in new_spec.responses:
        if resp == y:
            continue
        for col in new_spec.columns(resp):
            updates[(resp, col)] = params.values[(resp, col)]
    return ParameterSet.zeros(new_spec).replace(updates)


def marginalize_outer(params: ParameterSet) -> Callable:
    """Evaluator (x, w1, covariates) -> log odds of Y=1 given X=x and the
    inner mediator, with the outer mediator of a two-mediator system
    summed out.  Pointwise and exact for any treatment kind."""
    spec = params.spec
    meds = spec.mediators
    if len(meds) != 2:
        raise EffectError("outer marginalization is defined for exactly "
                          "two mediators")
    w1, w2 = meds
    y = spec.outcome.name

    def evaluator(x, w1val, covariates: Optional[Mapping] = None):
        base = {spec.treatment.name: x}
        if covariates:
            base.update(covariates)
        y0 = params.linear_predictor(y, {**base, w1.name: w1val, w2.name: 0.0})
        y1 = params.linear_predictor(y, {**base, w1.name: w1val, w2.name: 1.0})
        m0 = params.linear_predictor(w1.name, {**base, w2.name: 0.0})
        m1 = params.linear_predictor(w1.name, {**base, w2.name: 1.0})
        rw2 = params.linear_predictor(w2.name, base)
        common = (w1val * (m1 - m0) + softplus(m0) - softplus(m1)
                  + softplus(y0) - softplus(y1) + rw2)
        h1 = (y1 - y0) + common
        h0 = common
        return y0 + softplus(h1) - softplus(h0)

    return evaluator


def marginalize_outer_system(params: ParameterSet) -> ParameterSet:
    """Reduced single-mediator system with the outer of two mediators
    removed: outcome equation from the ``marginalize_outer`` evaluator,
    inner-mediator equation from its own one-step marginalization."""
    spec = params.spec
    meds = spec.mediators
    if len(meds) != 2:
        raise EffectError("outer marginalization is defined for exactly "
                          "two mediators")
    w1, w2 = meds
    y = spec.outcome.name
    rem_y = sorted(({w1.name} | spec.predictors(y) | spec.predictors(w1.name)
                    | spec.predictors(w2.name)) - {w2.name}, key=spec.position)
    rem_w1 = sorted((spec.predictors(w1.name) | spec.predictors(w2.name))
                    - {w2.name}, key=spec.position)
    new_vars = [v for v in spec.variables if v.name != w2.name]
    new_eqs = {y: _full_basis(rem_y), w1.name: _full_basis(rem_w1)}
    for resp, ts in spec.equations.items():
        if resp not in (y, w1.name, w2.name):
            new_eqs[resp] = ts
    new_spec = SystemSpec(tuple(new_vars), new_eqs).require_valid()

    evaluator = marginalize_outer(params)
    x_name = spec.treatment.name

    def y_value(assign):
        a = dict(assign)
        return evaluator(a.pop(x_name), a.pop(w1.name), a)

    def w1_value(assign):
        r0 = params.linear_predictor(w1.name, {**assign, w2.name: 0.0})
        r1 = params.linear_predictor(w1.name, {**assign, w2.name: 1.0})
        rw = params.linear_predictor(w2.name, assign)
        core = softplus(r0) - softplus(r1) + rw
        return softplus((r1 - r0) + core) - softplus(core) + r0

    updates = _extract_equation(new_spec, y, rem_y, y_value)
    updates.update(_extract_equation(new_spec, w1.name, rem_w1, w1_value))
    for resp in new_spec.responses:
        if resp in (y, w1.name):
            continue
        for col in new_spec.columns(resp):
            updates[(resp, col)] = params.values[(resp, col)]
    return ParameterSet.zeros(new_spec).replace(updates)
