"""Monte Carlo study harness for the ratio-of-effects estimator.

The data-generating process is the two-equation system

    logit P(W=1|x) = gamma0 + gamma_x x
    logit P(Y=1|x,w) = beta0 + beta_x x + beta_w w

with a binary Bernoulli(0.5) treatment redrawn each replication, or a
continuous treatment held fixed across replications as a seeded subsample
of a 150000-draw normal(0, var 2) pseudo-population (so the estimand does
not move with the sample size).

Each replication fits the system and produces the mediated share two ways:

* rsd: indirect / total from the exact marginal-logit decomposition
  (the {1,0} contrast for a binary treatment, the average probability
  effect ratio AIPE/ATPE for a continuous one);
* khb: the residualization comparison method, full model Y ~ X + W
  against reduced model Y ~ X + R with R the OLS residual of W on X,
  share = (reduced X coefficient - full X coefficient) / reduced X
  coefficient, rescaled by average partial effects on the probability
  scale for a continuous treatment.

Replications with any non-convergent logistic fit are dropped from both
methods (keeping the comparison on identical replication sets) and
counted; more than 5 percent exclusions aborts the cell.

All randomness descends from one master seed through named SeedSequence
children, so results are bit-for-bit reproducible and independent of
execution order.

The estimator formulas here are lean closed forms specialized to the
two-equation no-interaction model; tests pin them to the generic engine.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .dual import softplus
from .fitting import Dataset, irls

PSEUDO_POPULATION = 150_000
EXCLUSION_LIMIT = 0.05
_POP_TAG = 101
_SUB_TAG = 102
_REP_TAG = 200


class SimulationError(RuntimeError):
    """A study cell that cannot produce trustworthy numbers."""


@dataclass(frozen=True)
class SimConfig:
    """One study cell: treatment kind, effect size, sample size, seeds."""

    kind: str
    beta_x: float
    n: int
    replications: int
    seed: int
    beta0: float = -2.0
    beta_w: float = 2.0
    beta_xw: float = 0.0
    gamma0: float = -2.0
    gamma_x: float = 2.0
    pseudo_population: int = PSEUDO_POPULATION

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise SimulationError(f"unknown treatment kind {self.kind!r}")
        if self.beta_xw != 0.0:
            raise SimulationError(
                "the study design has no treatment-mediator interaction; "
                "beta_xw must be 0")
        if self.n < 1 or self.replications < 1:
            raise SimulationError("n and replications must be positive")
        if self.seed < 0:
            raise SimulationError("seed must be a nonnegative integer")


# -- closed forms for the two-equation model -------------------------------

def _eta(b0, bx, bw, g0, gx, x):
    """Marginal logit of Y given X=x with W summed out; x may be an array."""
    r0 = b0 + bx * x
    r1 = r0 + bw
    rw = g0 + gx * x
    core = softplus(r0) - softplus(r1) + rw
    return softplus(bw + core) - softplus(core) + r0


def share_binary(b0, bx, bw, g0, gx) -> float:
    """IE / TE for the {1,0} contrast on the log-odds scale."""
    te = _eta(b0, bx, bw, g0, gx, 1.0) - _eta(b0, bx, bw, g0, gx, 0.0)
    ie = _eta(b0, 0.0, bw, g0, gx, 1.0) - _eta(b0, 0.0, bw, g0, gx, 0.0)
    return ie / te


def _tpe_ipe(b0, bx, bw, g0, gx, x):
    """Pointwise TPE and IPE derivatives at each x (arrays welcome)."""
    r0 = b0 + bx * x
    r1 = r0 + bw
    rw = g0 + gx * x
    core = softplus(r0) - softplus(r1) + rw
    eta = softplus(bw + core) - softplus(core) + r0
    dcore = (expit(r0) - expit(r1)) * bx + gx
    deta = (expit(bw + core) - expit(core)) * dcore + bx
    p = expit(eta)
    tpe = p * (1.0 - p) * deta
    star = softplus(b0) - softplus(b0 + bw) + rw
    eta_s = softplus(bw + star) - softplus(star) + b0
    deta_s = (expit(bw + star) - expit(star)) * gx
    ps = expit(eta_s)
    ipe = ps * (1.0 - ps) * deta_s
    return tpe, ipe


def share_continuous(b0, bx, bw, g0, gx, xs: np.ndarray) -> float:
    """AIPE / ATPE over the supplied treatment values."""
    tpe, ipe = _tpe_ipe(b0, bx, bw, g0, gx, np.asarray(xs, dtype=float))
    return float(np.mean(ipe) / np.mean(tpe))


# -- seeded draws ----------------------------------------------------------

def pseudo_population(seed: int, size: int = PSEUDO_POPULATION) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _POP_TAG]))
    return rng.normal(0.0, np.sqrt(2.0), size)


def fixed_treatment_sample(seed: int, n: int,
                           size: int = PSEUDO_POPULATION) -> np.ndarray:
    """The size-n treatment subsample shared by every replication."""
    pop = pseudo_population(seed, size)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SUB_TAG,
                                                        int(n)]))
    idx = rng.choice(size, size=n, replace=False)
    return pop[idx]


def _cell_seed(config: SimConfig) -> np.random.SeedSequence:
    kind_code = 0 if config.kind == "binary" else 1
    return np.random.SeedSequence([int(config.seed), _REP_TAG, kind_code,
                                   int(round(config.beta_x * 1000)),
                                   int(config.n)])


def _draw(config: SimConfig, rng: np.random.Generator,
          xs: Optional[np.ndarray]):
    if config.kind == "binary":
        x = (rng.random(config.n) < 0.5).astype(float)
    else:
        x = xs
    w = (rng.random(config.n) < expit(config.gamma0
                                      + config.gamma_x * x)).astype(float)
    y = (rng.random(config.n) < expit(config.beta0 + config.beta_x * x
                                      + config.beta_w * w)).astype(float)
    return x, w, y


def generate_data(config: SimConfig, replication: int) -> Dataset:
    """The exact data of one replication, reproducible in isolation."""
    xs = None
    if config.kind == "continuous":
        xs = fixed_treatment_sample(config.seed, config.n,
                                    config.pseudo_population)
    children = _cell_seed(config).spawn(replication + 1)
    rng = np.random.default_rng(children[replication])
    x, w, y = _draw(config, rng, xs)
    return Dataset.from_records({"Y": y, "X": x, "W": w})


# -- per-replication estimators --------------------------------------------

def _fit_models(x: np.ndarray, w: np.ndarray, y: np.ndarray):
    """Fit the three logistic models one replication needs.

    Returns (w-model coefs, y-model coefs, reduced y-model coefs,
    full eta, reduced eta, converged flag).
    """
    n = len(x)
    ones = np.ones(n)
    xw_model = np.column_stack([ones, x])
    gamma, _, _, _, conv_w, _ = irls(xw_model, w, ones)
    xy_full = np.column_stack([ones, x, w])
    beta, _, _, _, conv_y, _ = irls(xy_full, y, ones)
    ols, *_ = np.linalg.lstsq(xw_model, w, rcond=None)
    resid = w - xw_model @ ols
    xy_red = np.column_stack([ones, x, resid])
    beta_r, _, _, _, conv_r, _ = irls(xy_red, y, ones)
    return (gamma, beta, beta_r, xy_full @ beta, xy_red @ beta_r,
            conv_w and conv_y and conv_r)


def rsd_ratio(x, w, y, kind: str,
              xs_for_average: Optional[np.ndarray] = None) -> float:
    """Mediated share from the fitted marginal-logit decomposition."""
    x = np.asarray(x, dtype=float)
    gamma, beta, _, _, _, conv = _fit_models(x, np.asarray(w, dtype=float),
                                             np.asarray(y, dtype=float))
    if not conv:
        raise SimulationError("non-convergent fit")
    b0, bx, bw = beta
    g0, gx = gamma
    if kind == "binary":
        return share_binary(b0, bx, bw, g0, gx)
    xs = x if xs_for_average is None else xs_for_average
    return share_continuous(b0, bx, bw, g0, gx, xs)


def khb_ratio(x, w, y, kind: str) -> float:
    """Mediated share from the residualization comparison estimator."""
    x = np.asarray(x, dtype=float)
    _, beta, beta_r, eta_full, eta_red, conv = _fit_models(
        x, np.asarray(w, dtype=float), np.asarray(y, dtype=float))
    if not conv:
        raise SimulationError("non-convergent fit")
    return _khb_share(beta, beta_r, eta_full, eta_red, kind)


def _khb_share(beta, beta_r, eta_full, eta_red, kind: str) -> float:
    bx_full, bx_red = beta[1], beta_r[1]
    if kind == "continuous":
        p_full = expit(eta_full)
        p_red = expit(eta_red)
        ape_full = float(np.mean(p_full * (1.0 - p_full)))
        ape_red = float(np.mean(p_red * (1.0 - p_red)))
        total = bx_red * ape_red
        indirect = bx_red * ape_red - bx_full * ape_full
        return indirect / total
    return (bx_red - bx_full) / bx_red


# -- the study -------------------------------------------------------------

def true_value(config: SimConfig) -> float:
    """The estimand: exact for a binary treatment, a pseudo-population
    average for a continuous one."""
    if config.kind == "binary":
        return share_binary(config.beta0, config.beta_x, config.beta_w,
                            config.gamma0, config.gamma_x)
    pop = pseudo_population(config.seed, config.pseudo_population)
    return share_continuous(config.beta0, config.beta_x, config.beta_w,
                            config.gamma0, config.gamma_x, pop)


@dataclass(frozen=True)
class MethodStats:
    average: float
    variance: float
    rmse: float


@dataclass(frozen=True)
class SimResult:
    kind: str
    beta_x: float
    n: int
    replications: int
    true_value: float
    rsd: MethodStats
    khb: MethodStats
    excluded: int


def _stats(estimates: np.ndarray, truth: float) -> MethodStats:
    avg = float(np.mean(estimates))
    var = float(np.mean((estimates - avg) ** 2))
    rmse = float(np.sqrt(np.mean((estimates - truth) ** 2)))
    return MethodStats(avg, var, rmse)


def run_cell(config: SimConfig) -> SimResult:
    """All replications of one (kind, beta_x, n) scenario."""
    xs = None
    if config.kind == "continuous":
        xs = fixed_treatment_sample(config.seed, config.n,
                                    config.pseudo_population)
    children = _cell_seed(config).spawn(config.replications)
    rsd_vals, khb_vals = [], []
    excluded = 0
    for child in children:
        rng = np.random.default_rng(child)
        x, w, y = _draw(config, rng, xs)
        gamma, beta, beta_r, eta_full, eta_red, conv = _fit_models(x, w, y)
        if not conv:
            excluded += 1
            continue
        b0, bx, bw = beta
        g0, gx = gamma
        if config.kind == "binary":
            rsd_vals.append(share_binary(b0, bx, bw, g0, gx))
        else:
            rsd_vals.append(share_continuous(b0, bx, bw, g0, gx, x))
        khb_vals.append(_khb_share(beta, beta_r, eta_full, eta_red,
                                   config.kind))
    if excluded > EXCLUSION_LIMIT * config.replications:
        raise SimulationError(
            f"{excluded} of {config.replications} replications excluded "
            f"(limit {EXCLUSION_LIMIT:.0%}) in cell "
            f"{config.kind}/beta_x={config.beta_x}/n={config.n}")
    truth = true_value(config)
    return SimResult(config.kind, config.beta_x, config.n,
                     config.replications, truth,
                     _stats(np.asarray(rsd_vals), truth),
                     _stats(np.asarray(khb_vals), truth),
                     excluded)


def run_study(grid: Mapping) -> list:
    """Run the full grid described by a config document.

    Keys: seed, replications, treatment (list of kinds), beta_x (list),
    n (list); optional truth overrides beta0, beta_w, gamma0, gamma_x,
    and pseudo_population.
    """
    try:
        seed = int(grid["seed"])
        reps = int(grid["replications"])
        kinds = list(grid["treatment"])
        betas = [float(b) for b in grid["beta_x"]]
        sizes = [int(n) for n in grid["n"]]
    except (KeyError, TypeError, ValueError) as e:
        raise SimulationError(f"bad study config: {e}") from None
    extra = {}
    for key in ("beta0", "beta_w", "gamma0", "gamma_x"):
        if key in grid:
            extra[key] = float(grid[key])
    if "pseudo_population" in grid:
        extra["pseudo_population"] = int(grid["pseudo_population"])
    results = []
    for kind in kinds:
        for beta_x in betas:
            for n in sizes:
                cfg = SimConfig(kind=kind, beta_x=beta_x, n=n,
                                replications=reps, seed=seed, **extra)
                results.append(run_cell(cfg))
    return results


def results_to_csv(results: Sequence[SimResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "treatment", "beta_x", "n", "average",
                     "variance", "rmse", "true_value", "excluded"])
    for r in results:
        for method, st in (("khb", r.khb), ("rsd", r.rsd)):
            writer.writerow([method, r.kind, r.beta_x, r.n,
                             f"{st.average:.6f}", f"{st.variance:.6f}",
                             f"{st.rmse:.6f}", f"{r.true_value:.6f}",
                             r.excluded])
    return buf.getvalue()
