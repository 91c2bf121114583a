"""Recursive systems of binary logistic regressions.

A system is an ordered collection of variables (one binary outcome, one
treatment, k binary mediators, optional covariates) together with one
hierarchical logistic equation per modelled response.  The ordering
convention follows the outcome-first layout used throughout the package:

    Y, W1, ..., Wk, X, C...

where W1 is the innermost mediator (adjacent to Y) and Wk the outermost
(adjacent to X).  Each equation may only use predictors that come strictly
later in this ordering, so the system corresponds to a DAG.

This module holds the structural pieces everything else builds on:

* ``VariableSpec`` / ``Term`` / ``SystemSpec`` describe the system,
* ``ParameterSet`` stores one coefficient per design column and evaluates
  linear predictors,
* ``ZeroMask`` / ``zero_out`` implement the coefficient-zeroing machinery
  that effect definitions are made of: zeroing a variable inside one
  equation removes its main effect and every interaction containing it.

Categorical variables are dummy-coded against their first level, so a term
like ``X:W`` with a three-level X expands into the columns ``X{2,1}:W`` and
``X{3,1}:W``.  All containers are immutable after construction.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

Level = Union[int, float, str]

ROLES = ("outcome", "treatment", "mediator", "covariate")
KINDS = ("binary", "continuous", "categorical")


class ModelSpecError(ValueError):
    """An invalid system specification, parameter domain, or lookup."""


@dataclass(frozen=True)
class VariableSpec:
    """One variable of the system.

    Parameters
    ----------
    name : str
        Identifier used in equations and data files.
    role : {"outcome", "treatment", "mediator", "covariate"}
    kind : {"binary", "continuous", "categorical"}
        Binary variables take values in {0, 1}; categorical variables
        carry an ordered level list whose first entry is the reference.
    levels : tuple
        Level list, categorical only.
    mediator_index : int, optional
        1 for the mediator closest to Y, k for the one closest to X.
        Present exactly when role is "mediator".
    """

    name: str
    role: str
    kind: str
    levels: tuple = ()
    mediator_index: Optional[int] = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ModelSpecError("variable name must be a non-empty string")
        if self.role not in ROLES:
            raise ModelSpecError(f"unknown role {self.role!r} for {self.name!r}")
        if self.kind not in KINDS:
            raise ModelSpecError(f"unknown kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise ModelSpecError(
                    f"categorical variable {self.name!r} needs at least two levels")
            if len(set(self.levels)) != len(self.levels):
                raise ModelSpecError(
                    f"categorical variable {self.name!r} has duplicate levels")
        elif self.levels:
            raise ModelSpecError(
                f"levels are only allowed on categorical variables ({self.name!r})")
        has_index = self.mediator_index is not None
        if has_index != (self.role == "mediator"):
            raise ModelSpecError(
                f"mediator_index must be present iff role is mediator ({self.name!r})")
        if has_index and self.mediator_index < 1:
            raise ModelSpecError(f"mediator_index must be >= 1 ({self.name!r})")


@dataclass(frozen=True)
class Term:
    """A model term: a set of variable names, empty set meaning the intercept."""

    factors: frozenset

    @staticmethod
    def parse(text: str) -> "Term":
        """Parse "1" (intercept) or colon-joined factors like "X:W"."""
        text = text.strip()
        if text == "1":
            return Term(frozenset())
        parts = [p.strip() for p in text.split(":")]
        if any(not p for p in parts):
            raise ModelSpecError(f"cannot parse term {text!r}")
        if len(set(parts)) != len(parts):
            raise ModelSpecError(f"repeated factor in term {text!r}")
        return Term(frozenset(parts))

    @staticmethod
    def of(*names: str) -> "Term":
        return Term(frozenset(names))

    @property
    def order(self) -> int:
        return len(self.factors)

    def __str__(self) -> str:
        if not self.factors:
            return "1"
        return ":".join(sorted(self.factors))


INTERCEPT = Term(frozenset())


@dataclass(frozen=True)
class Column:
    """One design-matrix column: a term with a level chosen per categorical factor.

    ``factors`` is a name-sorted tuple of (variable, level) pairs where the
    level is None for numeric factors.  The empty tuple is the intercept.
    """

    factors: tuple

    @property
    def term(self) -> Term:
        return Term(frozenset(name for name, _ in self.factors))

    @property
    def variables(self) -> frozenset:
        return frozenset(name for name, _ in self.factors)


def column_value(col: Column, assignment: Mapping[str, object]):
    """Product of factor values under ``assignment``.

    Numeric factors contribute their value (plain numbers or Duals),
    categorical factors contribute the 0/1 indicator of their level.
    """
    v = 1.0
    for name, lvl in col.factors:
        if name not in assignment:
            raise ModelSpecError(f"no value supplied for predictor {name!r}")
        x = assignment[name]
        if lvl is None:
            v = v * x
        else:
            v = v * (1.0 if x == lvl else 0.0)
    return v


_LEVEL_RE = re.compile(r"^(?P<name>[^{}:]+)\{(?P<lvl>[^{},]+),(?P<ref>[^{},]+)\}$")


@dataclass(frozen=True)
class SystemSpec:
    """The DAG plus one ordered hierarchical term list per modelled response."""

    variables: tuple
    equations: Mapping[str, tuple]

    @staticmethod
    def build(variables: Sequence[VariableSpec],
              equations: Mapping[str, Sequence]) -> "SystemSpec":
        """Build from variable specs and equations given as term strings or Terms."""
        eqs = {}
        for resp, terms in equations.items():
            parsed = tuple(t if isinstance(t, Term) else Term.parse(str(t))
                           for t in terms)
            eqs[resp] = parsed
        return SystemSpec(tuple(variables), eqs)

    # -- structure ---------------------------------------------------------

    @cached_property
    def by_name(self) -> Mapping[str, VariableSpec]:
        out = {}
        for v in self.variables:
            if v.name in out:
                raise ModelSpecError(f"duplicate variable name {v.name!r}")
            out[v.name] = v
        return out

    def variable(self, name: str) -> VariableSpec:
        try:
            return self.by_name[name]
        except KeyError:
            raise ModelSpecError(f"unknown variable {name!r}") from None

    @cached_property
    def outcome(self) -> VariableSpec:
        outs = [v for v in self.variables if v.role == "outcome"]
        if len(outs) != 1:
            raise ModelSpecError("system must declare exactly one outcome")
        return outs[0]

    @cached_property
    def treatment(self) -> VariableSpec:
        tr = [v for v in self.variables if v.role == "treatment"]
        if len(tr) != 1:
            raise ModelSpecError("system must declare exactly one treatment")
        return tr[0]

    @cached_property
    def mediators(self) -> tuple:
        """Mediators sorted innermost (index 1) first."""
        meds = [v for v in self.variables if v.role == "mediator"]
        return tuple(sorted(meds, key=lambda v: v.mediator_index))

    @cached_property
    def covariates(self) -> tuple:
        return tuple(v for v in self.variables if v.role == "covariate")

    @cached_property
    def ordering(self) -> tuple:
        """Names in the canonical order Y, W1..Wk, X, C..."""
        return ((self.outcome.name,)
                + tuple(m.name for m in self.mediators)
                + (self.treatment.name,)
                + tuple(c.name for c in self.covariates))

    def position(self, name: str) -> int:
        try:
            return self.ordering.index(name)
        except ValueError:
            raise ModelSpecError(f"unknown variable {name!r}") from None

    @cached_property
    def responses(self) -> tuple:
        """Modelled responses in canonical order (outcome first)."""
        declared = set(self.equations)
        return tuple(n for n in self.ordering if n in declared)

    def terms(self, response: str) -> tuple:
        try:
            return self.equations[response]
        except KeyError:
            raise ModelSpecError(f"no equation for response {response!r}") from None

    def predictors(self, response: str) -> frozenset:
        names = set()
        for t in self.terms(response):
            names |= t.factors
        return frozenset(names)

    # -- design columns ----------------------------------------------------

    def _expand_term(self, term: Term) -> tuple:
        names = sorted(term.factors)
        if not names:
            return (Column(()),)
        choices = []
        for n in names:
            var = self.variable(n)
            if var.kind == "categorical":
                choices.append(tuple((n, lvl) for lvl in var.levels[1:]))
            else:
                choices.append(((n, None),))
        return tuple(Column(tuple(combo)) for combo in itertools.product(*choices))

    @cached_property
    def _columns(self) -> Mapping[str, tuple]:
        return {resp: tuple(c for t in terms for c in self._expand_term(t))
                for resp, terms in self.equations.items()}

    def columns(self, response: str) -> tuple:
        try:
            return self._columns[response]
        except KeyError:
            raise ModelSpecError(f"no equation for response {response!r}") from None

    def column_label(self, col: Column) -> str:
        if not col.factors:
            return "1"
        parts = []
        for name, lvl in col.factors:
            if lvl is None:
                parts.append(name)
            else:
                ref = self.variable(name).levels[0]
                parts.append(f"{name}{{{lvl},{ref}}}")
        return ":".join(parts)

    def parse_column_label(self, text: str) -> Column:
        text = text.strip()
        if text == "1":
            return Column(())
        factors = []
        for piece in text.split(":"):
            piece = piece.strip()
            m = _LEVEL_RE.match(piece)
            if m:
                var = self.variable(m.group("name"))
                raw = m.group("lvl")
                lvl = next((l for l in var.levels if str(l) == raw), None)
                if lvl is None:
                    raise ModelSpecError(
                        f"level {raw!r} not declared for {var.name!r}")
                factors.append((var.name, lvl))
            else:
                self.variable(piece)
                factors.append((piece, None))
        return Column(tuple(sorted(factors, key=lambda f: f[0])))

    @cached_property
    def flat_coords(self) -> tuple:
        """All (response, column) pairs in the canonical flattened order."""
        return tuple((resp, col) for resp in self.responses
                     for col in self.columns(resp))

    # -- validation --------------------------------------------------------

    def validate(self) -> list:
        """Collect invariant violations; empty list means the system is valid."""
        problems = []
        try:
            self.by_name
        except ModelSpecError as e:
            return [str(e)]
        for role, want in (("outcome", 1), ("treatment", 1)):
            got = sum(1 for v in self.variables if v.role == role)
            if got != want:
                problems.append(f"system declares {got} {role} variables, needs {want}")
                return problems
        if self.outcome.kind != "binary":
            problems.append(f"outcome {self.outcome.name!r} must be binary")
        idx = sorted(m.mediator_index for m in self.mediators)
        if idx != list(range(1, len(idx) + 1)):
            problems.append(f"mediator indices {idx} must be 1..k with no gaps")
        for m in self.mediators:
            if m.kind != "binary":
                problems.append(f"mediator {m.name!r} must be binary")
        order = {n: i for i, n in enumerate(self.ordering)}
        for resp, terms in self.equations.items():
            if resp not in self.by_name:
                problems.append(f"equation for undeclared variable {resp!r}")
                continue
            if self.by_name[resp].role == "covariate":
                problems.append(f"covariate {resp!r} cannot be a response")
                continue
            seen = set()
            present = {t.factors for t in terms}
            for t in terms:
                if t.factors in seen:
                    problems.append(f"{resp}: duplicate term {t}")
                seen.add(t.factors)
                for v in t.factors:
                    if v not in self.by_name:
                        problems.append(f"{resp}: term {t} uses undeclared {v!r}")
                    elif order[v] <= order[resp]:
                        problems.append(
                            f"{resp}: predictor {v!r} does not come after the "
                            f"response in the ordering (recursivity)")
                if t.order >= 1:
                    for r in range(t.order):
                        for sub in itertools.combinations(sorted(t.factors), r):
                            if frozenset(sub) not in present:
                                missing = Term(frozenset(sub))
                                problems.append(
                                    f"{resp}: term {t} requires lower-order "
                                    f"term {missing} (hierarchy)")
        for m in self.mediators:
            if m.name not in self.equations:
                problems.append(f"mediator {m.name!r} has no equation")
        if self.outcome.name not in self.equations:
            problems.append(f"outcome {self.outcome.name!r} has no equation")
        return problems

    def require_valid(self) -> "SystemSpec":
        problems = self.validate()
        if problems:
            raise ModelSpecError("invalid system: " + "; ".join(problems))
        return self

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        vs = []
        for v in self.variables:
            d = {"name": v.name, "role": v.role, "kind": v.kind}
            if v.kind == "categorical":
                d["levels"] = list(v.levels)
            if v.mediator_index is not None:
                d["index"] = v.mediator_index
            vs.append(d)
        eqs = {resp: [str(t) for t in terms]
               for resp, terms in self.equations.items()}
        return {"variables": vs, "equations": eqs}

    @staticmethod
    def from_json_dict(d: Mapping) -> "SystemSpec":
        try:
            raw_vars = d["variables"]
            raw_eqs = d["equations"]
        except (KeyError, TypeError):
            raise ModelSpecError(
                "model document needs 'variables' and 'equations'") from None
        variables = []
        for rv in raw_vars:
            variables.append(VariableSpec(
                name=rv["name"],
                role=rv["role"],
                kind=rv["kind"],
                levels=tuple(rv.get("levels", ())),
                mediator_index=rv.get("index", rv.get("mediator_index"))))
        return SystemSpec.build(variables, raw_eqs)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    problems: tuple

    def __bool__(self) -> bool:
        return self.ok


def validate_system(spec: SystemSpec) -> ValidationReport:
    """Check every structural invariant, returning a report instead of raising."""
    problems = tuple(spec.validate())
    return ValidationReport(not problems, problems)


@dataclass(frozen=True)
class ParameterSet:
    """One coefficient per design column of every equation in a system.

    Immutable; ``zero_out`` and ``replace`` return modified copies.  The
    value domain always covers exactly the columns of the owning spec.
    """

    spec: SystemSpec
    values: Mapping[tuple, float]

    @staticmethod
    def zeros(spec: SystemSpec) -> "ParameterSet":
        return ParameterSet(spec, {coord: 0.0 for coord in spec.flat_coords})

    @staticmethod
    def from_nested(spec: SystemSpec, nested: Mapping[str, Mapping[str, float]],
                    strict: bool = False) -> "ParameterSet":
        """Build from {response: {column label: value}}.

        Labels missing from ``nested`` default to 0 unless ``strict``;
        unknown responses or labels always raise.
        """
        values = {coord: 0.0 for coord in spec.flat_coords}
        for resp, labels in nested.items():
            cols = spec.columns(resp)
            by_label = {spec.column_label(c): c for c in cols}
            for label, val in labels.items():
                col = by_label.get(label)
                if col is None:
                    col = by_label.get(spec.column_label(spec.parse_column_label(label)))
                if col is None:
                    raise ModelSpecError(
                        f"{resp}: no design column labelled {label!r}")
                values[(resp, col)] = float(val)
            if strict and len(labels) != len(cols):
                missing = [spec.column_label(c) for c in cols
                           if spec.column_label(c) not in labels]
                raise ModelSpecError(f"{resp}: values missing for {missing}")
        return ParameterSet(spec, values)

    def get(self, response: str, col) -> float:
        if isinstance(col, str):
            col = self.spec.parse_column_label(col)
        try:
            return self.values[(response, col)]
        except KeyError:
            raise ModelSpecError(
                f"no coefficient for {response!r} column "
                f"{self.spec.column_label(col)!r}") from None

    def nested(self) -> dict:
        out = {}
        for resp in self.spec.responses:
            out[resp] = {self.spec.column_label(c): self.values[(resp, c)]
                         for c in self.spec.columns(resp)}
        return out

    def replace(self, updates: Mapping[tuple, float]) -> "ParameterSet":
        """Copy with (response, column-or-label) entries overwritten."""
        values = dict(self.values)
        for (resp, col), val in updates.items():
            if isinstance(col, str):
                col = self.spec.parse_column_label(col)
            if (resp, col) not in values:
                raise ModelSpecError(
                    f"no coefficient for {resp!r} column "
                    f"{self.spec.column_label(col)!r}")
            values[(resp, col)] = float(val)
        return ParameterSet(self.spec, values)

    def flatten(self) -> np.ndarray:
        return np.array([self.values[coord] for coord in self.spec.flat_coords],
                        dtype=float)

    @staticmethod
    def from_vector(spec: SystemSpec, vec: np.ndarray) -> "ParameterSet":
        coords = spec.flat_coords
        if len(vec) != len(coords):
            raise ModelSpecError(
                f"vector length {len(vec)} does not match the "
                f"{len(coords)} coefficients of the system")
        return ParameterSet(spec, {coord: float(v) for coord, v in zip(coords, vec)})

    def linear_predictor(self, response: str, assignment: Mapping[str, object]):
        """Sum of coefficient times column value; supports Dual inputs."""
        acc = 0.0
        for col in self.spec.columns(response):
            coef = self.values[(response, col)]
            acc = acc + coef * column_value(col, assignment)
        return acc

    def zero_out(self, targets: Iterable[tuple]) -> "ParameterSet":
        return ZeroMask.from_targets(self.spec, targets).apply(self)


@dataclass(frozen=True)
class ZeroMask:
    """A set of (response, term) pairs whose coefficients are forced to zero.

    Built from (response, variable) targets: zeroing variable v inside
    equation r zeroes every term of r containing v, so higher-order
    interactions are always swept along with the main effect.
    """

    zeroed: frozenset

    @staticmethod
    def from_targets(spec: SystemSpec,
                     targets: Iterable[tuple]) -> "ZeroMask":
        zeroed = set()
        for resp, var in targets:
            if resp not in spec.equations:
                raise ModelSpecError(f"no equation for response {resp!r}")
            spec.variable(var)
            for t in spec.terms(resp):
                if var in t.factors:
                    zeroed.add((resp, t))
        return ZeroMask(frozenset(zeroed))

    def apply(self, params: ParameterSet) -> ParameterSet:
        values = dict(params.values)
        for (resp, col) in params.spec.flat_coords:
            if (resp, col.term) in self.zeroed:
                values[(resp, col)] = 0.0
        return ParameterSet(params.spec, values)

    def __or__(self, other: "ZeroMask") -> "ZeroMask":
        return ZeroMask(self.zeroed | other.zeroed)


def zero_out(params: ParameterSet, targets: Iterable[tuple]) -> ParameterSet:
    """Return a copy of ``params`` with the targeted (equation, variable)
    coefficients set to zero, interactions included."""
    return params.zero_out(targets)


def linear_predictor(params: ParameterSet, response: str,
                     assignment: Mapping[str, object]):
    return params.linear_predictor(response, assignment)
