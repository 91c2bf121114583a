"""Maximum-likelihood fitting of the per-equation logistic regressions.

The joint likelihood of a recursive system factorizes over equations, so
each response is fitted on its own design matrix and the joint covariance
is block-diagonal by equation.  Fitting is plain Newton / IRLS with
step-halving, which copes with the quasi-separated cells that sparse
contingency data can produce.

Data can arrive as individual records or as weighted covariate patterns
(rows plus a count column); both routes produce identical estimates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .dual import expit, softplus
from .model import ModelSpecError, ParameterSet, SystemSpec, VariableSpec

MAX_ITER = 100
SCORE_TOL = 1e-8
LOGLIK_TOL = 1e-12
MAX_HALVINGS = 10
BIG_COEF = 50.0
BIG_LOGIT = 15.0


class DataError(ValueError):
    """Raised for unusable data: empty, missing variables, bad values."""


class FitError(RuntimeError):
    """Raised when an equation cannot be fitted (for example collinearity)."""


@dataclass
class Dataset:
    """Column-oriented data with per-row counts (all ones for record data)."""

    columns: Mapping[str, np.ndarray]
    counts: np.ndarray

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        lengths.add(len(self.counts))
        if len(lengths) > 1:
            raise DataError("columns and counts must share one length")
        if np.any(np.asarray(self.counts, dtype=float) < 0):
            raise DataError("counts must be nonnegative")

    @property
    def n(self) -> float:
        return float(np.sum(self.counts))

    @property
    def nrows(self) -> int:
        return len(self.counts)

    @staticmethod
    def from_records(columns: Mapping[str, Sequence]) -> "Dataset":
        cols = {k: np.asarray(v, dtype=object) for k, v in columns.items()}
        some = next(iter(cols.values()), np.array([]))
        return Dataset(cols, np.ones(len(some)))

    @staticmethod
    def from_patterns(columns: Mapping[str, Sequence],
                      counts: Sequence) -> "Dataset":
        cols = {k: np.asarray(v, dtype=object) for k, v in columns.items()}
        return Dataset(cols, np.asarray(counts, dtype=float))

    @staticmethod
    def from_rows(rows: Sequence[Mapping]) -> "Dataset":
        """List of dicts; a 'count' key turns a row into a weighted pattern."""
        if not rows:
            return Dataset({}, np.zeros(0))
        names = [k for k in rows[0] if k != "count"]
        cols = {k: [] for k in names}
        counts = []
        for r in rows:
            for k in names:
                if k not in r:
                    raise DataError(f"row is missing a value for {k!r}")
                cols[k].append(r[k])
            counts.append(float(r.get("count", 1.0)))
        return Dataset({k: np.asarray(v, dtype=object) for k, v in cols.items()},
                       np.asarray(counts, dtype=float))

    @staticmethod
    def from_csv(path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [dict(r) for r in reader]
        if not rows:
            raise DataError(f"empty data: {path}")
        return Dataset.from_rows(rows)

    @staticmethod
    def from_json(path) -> "Dataset":
        with open(path) as fh:
            doc = json.load(fh)
        if isinstance(doc, dict):
            doc = doc.get("rows", [])
        if not doc:
            raise DataError(f"empty data: {path}")
        return Dataset.from_rows(doc)

    @staticmethod
    def load(path) -> "Dataset":
        path = Path(path)
        if path.suffix.lower() == ".json":
            return Dataset.from_json(path)
        return Dataset.from_csv(path)


def _coerce_one(var: VariableSpec, raw):
    if var.kind == "categorical":
        for lvl in var.levels:
            if raw == lvl or str(raw) == str(lvl):
                return lvl
        raise DataError(f"value {raw!r} is not a level of {var.name!r} "
                        f"(levels: {list(var.levels)})")
    try:
        x = float(raw)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {raw!r} for {var.name!r}") from None
    if var.kind == "binary" and x not in (0.0, 1.0):
        raise DataError(f"binary variable {var.name!r} has value {raw!r}")
    return x


def coerce_column(var: VariableSpec, values: np.ndarray) -> np.ndarray:
    out = [_coerce_one(var, v) for v in values]
    if var.kind == "categorical":
        return np.asarray(out, dtype=object)
    return np.asarray(out, dtype=float)


def design_matrix(spec: SystemSpec, response: str, data: Dataset):
    """Design matrix, response vector, and weights for one equation."""
    needed = sorted(spec.predictors(response) | {response})
    coerced = {}
    for name in needed:
        if name not in data.columns:
            raise DataError(f"data has no column {name!r}")
        coerced[name] = coerce_column(spec.variable(name), data.columns[name])
    y = coerced[response]
    if spec.variable(response).kind != "binary":
        raise ModelSpecError(f"response {response!r} must be binary to fit")
    cols = spec.columns(response)
    X = np.empty((data.nrows, len(cols)))
    for j, col in enumerate(cols):
        v = np.ones(data.nrows)
        for name, lvl in col.factors:
            arr = coerced[name]
            if lvl is None:
                v = v * arr.astype(float)
            else:
                v = v * (arr == lvl).astype(float)
        X[:, j] = v
    return X, y.astype(float), np.asarray(data.counts, dtype=float)


def _check_rank(X: np.ndarray, w: np.ndarray, labels: Sequence[str]):
    keep = w > 0
    Xw = X[keep] * np.sqrt(w[keep])[:, None]
    if Xw.shape[0] == 0:
        raise DataError("empty data: no rows with positive count")
    _, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(Xw.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        bad = sorted(labels[j] for j in piv[rank:])
        raise FitError(f"design matrix is rank deficient; collinear terms: {bad}")


def irls(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Newton iterations with step-halving.  Returns (beta, H, loglik,
    iterations, converged, separation) where H is the observed information
    at the returned coefficients."""
    n, p = X.shape
    beta = np.zeros(p)
    eta = X @ beta

    def loglik_of(e):
        return float(np.sum(w * (y * e - softplus(e))))

    ll = loglik_of(eta)
    converged = False
    it = 0
    while it < MAX_ITER:
        it += 1
        prob = expit(eta)
        score = X.T @ (w * (y - prob))
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        wdiag = w * prob * (1.0 - prob)
        H = X.T @ (X * wdiag[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        new_beta = beta + step
        new_eta = X @ new_beta
        new_ll = loglik_of(new_eta)
        halvings = 0
        while new_ll < ll and halvings < MAX_HALVINGS:
            step = 0.5 * step
            new_beta = beta + step
            new_eta = X @ new_beta
            new_ll = loglik_of(new_eta)
            halvings += 1
        beta, eta = new_beta, new_eta
        if abs(new_ll - ll) < LOGLIK_TOL * (1.0 + abs(ll)):
            ll = new_ll
            converged = True
            break
        ll = new_ll
    prob = expit(eta)
    wdiag = w * prob * (1.0 - prob)
    H = X.T @ (X * wdiag[:, None])
    separation = (not converged) or bool(np.max(np.abs(beta)) > BIG_COEF)
    if not separation:
        # a score-converged fit can still sit on a separation ray: fitted
        # logits far beyond anything an interior optimum produces, every
        # one of them classifying its observation perfectly
        live = w > 0
        extreme = live & (np.abs(eta) > BIG_LOGIT)
        if np.any(extreme) and np.all(y[extreme] == (eta[extreme] > 0)):
            separation = True
    return beta, H, ll, it, converged, separation


@dataclass
class EquationFit:
    response: str
    labels: tuple
    coef: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    separation: bool


def fit_logistic(data: Dataset, spec: SystemSpec, response: str) -> EquationFit:
    """Fit one equation of the system by maximum likelihood."""
    if data.nrows == 0 or data.n == 0:
        raise DataError("empty data")
    X, y, w = design_matrix(spec, response, data)
    labels = tuple(spec.column_label(c) for c in spec.columns(response))
    _check_rank(X, w, labels)
    beta, H, ll, it, converged, separation = irls(X, y, w)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
        separation = True
    return EquationFit(response, labels, beta, cov, ll, it, converged, separation)


@dataclass
class FittedSystem:
    """A fitted recursive system: estimates, block covariance, diagnostics."""

    spec: SystemSpec
    params: ParameterSet
    cov_blocks: Mapping[str, np.ndarray]
    diagnostics: Mapping[str, EquationFit]
    n: float

    def covariance_matrix(self) -> np.ndarray:
        """Full block-diagonal covariance in flat_coords order."""
        blocks = [self.cov_blocks[resp] for resp in self.spec.responses]
        return scipy.linalg.block_diag(*blocks)

    def se(self, response: str, label: str) -> float:
        cols = self.spec.columns(response)
        labels = [self.spec.column_label(c) for c in cols]
        j = labels.index(label)
        return float(np.sqrt(self.cov_blocks[response][j, j]))

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_json_dict(),
            "n": self.n,
            "params": self.params.nested(),
            "covariance": {resp: self.cov_blocks[resp].tolist()
                           for resp in self.spec.responses},
            "diagnostics": {
                resp: {
                    "loglik": d.loglik,
                    "iterations": d.iterations,
                    "converged": d.converged,
                    "separation": d.separation,
                }
                for resp, d in self.diagnostics.items()
            },
        }

    @staticmethod
    def from_json_dict(doc: Mapping) -> "FittedSystem":
        spec = SystemSpec.from_json_dict(doc["spec"]).require_valid()
        params = ParameterSet.from_nested(spec, doc["params"], strict=True)
        cov_blocks = {resp: np.asarray(doc["covariance"][resp], dtype=float)
                      for resp in spec.responses}
        diagnostics = {}
        for resp, d in doc.get("diagnostics", {}).items():
            labels = tuple(spec.column_label(c) for c in spec.columns(resp))
            k = len(labels)
            coef = np.array([doc["params"][resp][l] for l in labels])
            diagnostics[resp] = EquationFit(
                resp, labels, coef, cov_blocks[resp], d["loglik"],
                d["iterations"], d["converged"], d["separation"])
        return FittedSystem(spec, params, cov_blocks, diagnostics,
                            float(doc["n"]))

    def summary_text(self) -> str:
        lines = []
        for resp in self.spec.responses:
            d = self.diagnostics.get(resp)
            lines.append(f"equation {resp}")
            if d is not None:
                flag = ""
                if d.separation:
                    flag = "  [separation warning]"
                lines.append(f"  loglik {d.loglik:.4f}  iterations "
                             f"{d.iterations}  converged {d.converged}{flag}")
            lines.append(f"  {'term':<14}{'estimate':>12}{'se':>12}")
            cols = self.spec.columns(resp)
            for j, col in enumerate(cols):
                label = self.spec.column_label(col)
                est = self.params.values[(resp, col)]
                se = float(np.sqrt(self.cov_blocks[resp][j, j]))
                lines.append(f"  {label:<14}{est:>12.4f}{se:>12.4f}")
            lines.append("")
        return "\n".join(lines)


def fit_system(data: Dataset, spec: SystemSpec) -> FittedSystem:
    """Fit every declared equation and assemble the joint fitted system."""
    spec.require_valid()
    params = ParameterSet.zeros(spec)
    updates = {}
    cov_blocks = {}
    diagnostics = {}
    for resp in spec.responses:
        try:
            eq = fit_logistic(data, spec, resp)
        except (DataError, FitError) as e:
            raise type(e)(f"equation {resp}: {e}") from e
        cols = spec.columns(resp)
        for col, b in zip(cols, eq.coef):
            updates[(resp, col)] = float(b)
        cov_blocks[resp] = eq.cov
        diagnostics[resp] = eq
    params = params.replace(updates)
    return FittedSystem(spec, params, cov_blocks, diagnostics, data.n)
