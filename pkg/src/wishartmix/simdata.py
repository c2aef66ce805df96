"""Builtin simulation designs, generators, and permutation-matched errors.

The four designs cover both families at p = 2 and p = 8 with K = 3:
weights (0.35, 0.40, 0.25); degrees of freedom (8, 12, 3) at p = 2 and
(9, 20, 14) at p = 8; fixed 2x2 scale matrices at p = 2 and AR-structured
scales rho_k^|j-j'| with rho = (0.5, 0.2, 0.8) at p = 8. MoE designs use
q = 3 gating covariates (intercept plus two standard normals) with effects
drawn once from the design seed, uniform on [-2, 2], and frozen thereafter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, UnknownDesign, WishartMixError
from .mcmc import ess
from .model import Dataset, MixtureParams, MoeParams, gating_log_probs
from .numcore import SpdMatrix
from .sampling import RngState, draw_wishart

_DESIGN_SEED = 451_726_093

_PI = np.array([0.35, 0.40, 0.25])
_NU = {2: np.array([8.0, 12.0, 3.0]), 8: np.array([9.0, 20.0, 14.0])}
_SIGMA_P2 = (
    np.array([[0.5, 0.2], [0.2, 0.7]]),
    np.array([[2.0, 0.6], [0.6, 1.5]]),
    np.array([[4.0, 0.2], [0.2, 3.0]]),
)
_AR_RHO = (0.5, 0.2, 0.8)
_MOE_Q = 3

DESIGN_NAMES = ("mix-p2", "mix-p8", "moe-p2", "moe-p8")


@dataclass
class SimDesign:
    name: str
    family: str           # mixture | moe
    n: int
    p: int
    K: int
    truth: object         # MixtureParams | MoeParams
    seed: int             # design seed (fixes the frozen MoE beta)

    def with_n(self, n):
        return replace(self, n=int(n))


def _design_scales(p):
    if p == 2:
        return [SpdMatrix(s) for s in _SIGMA_P2]
    idx = np.arange(p)
    return [SpdMatrix(rho ** np.abs(idx[:, None] - idx[None, :])) for rho in _AR_RHO]


def builtin_design(name, n=500):
    """The four named designs, exactly parameterized; UnknownDesign otherwise."""
    if name not in DESIGN_NAMES:
        raise UnknownDesign(f"unknown design {name!r}; choose from {DESIGN_NAMES}")
    family = "moe" if name.startswith("moe") else "mixture"
    p = 8 if name.endswith("p8") else 2
    sigma = _design_scales(p)
    nu = _NU[p].copy()
    if family == "mixture":
        truth = MixtureParams(K=3, pi=_PI.copy(), nu=nu, sigma=sigma)
    else:
        beta_rng = RngState(_DESIGN_SEED, stream=DESIGN_NAMES.index(name))
        beta = beta_rng.generator.uniform(-2.0, 2.0, size=(_MOE_Q, 2))
        truth = MoeParams(K=3, beta=beta, nu=nu, sigma=sigma)
    return SimDesign(name=name, family=family, n=int(n), p=p, K=3,
                     truth=truth, seed=_DESIGN_SEED)


def generate(design, rng):
    """Draw (Dataset, true labels) from a design.

    Labels come from the (covariate-dependent) weights, observations from the
    labeled Wishart component. MoE designs emit covariates
    [1, N(0,1), N(0,1)] with an explicit intercept column.
    """
    truth = design.truth
    n = design.n
    gen = rng.generator
    if design.family == "moe":
        x = np.concatenate(
            [np.ones((n, 1)), gen.standard_normal((n, _MOE_Q - 1))], axis=1
        )
        logw = gating_log_probs(x, truth.beta)
        weights = np.exp(logw)
    else:
        x = None
        weights = np.tile(truth.pi, (n, 1))
    cdf = np.cumsum(weights, axis=1)
    u = gen.uniform(size=n)
    labels = np.minimum((cdf < u[:, None]).sum(axis=1), design.K - 1)
    mats = [draw_wishart(rng, truth.nu[z], truth.sigma[z]) for z in labels]
    names = ["intercept"] + [f"x{j}" for j in range(2, _MOE_Q + 1)] if x is not None else None
    return Dataset(mats, covariates=x, covariate_names=names), labels.astype(np.int64)


def match_components(est_sigma, true_sigma):
    """Permutation (truth slot -> estimate index) minimizing the total
    Frobenius distance between scale matrices (Hungarian assignment)."""
    K = len(true_sigma)
    cost = np.empty((K, K))
    for a in range(K):
        for b in range(K):
            cost[a, b] = np.linalg.norm(est_sigma[a].entries - true_sigma[b].entries)
    row, col = linear_sum_assignment(cost)
    perm = np.empty(K, dtype=np.int64)
    perm[col] = row
    return perm


def _implied_pi(params):
    if isinstance(params, MixtureParams):
        return np.asarray(params.pi, dtype=float)
    if params.q == 1:  # intercept-only gating carries fixed implied weights
        return np.exp(gating_log_probs(np.ones((1, 1)), params.beta)[0])
    return None


def _referenced_beta(beta, perm):
    full = np.concatenate([beta, np.zeros((beta.shape[0], 1))], axis=1)[:, perm]
    return full - full[:, -1][:, None]


def eval_errors(estimate, truth):
    """Average componentwise errors under the best component matching.

    pi: mean L1; nu: mean L1; sigma: mean squared Frobenius; beta: mean
    squared Frobenius after re-referencing the matched baseline class.
    Metrics one side cannot express are reported as None.
    """
    K = truth.K
    if estimate.K != K:
        raise DimensionMismatch(f"estimate has K = {estimate.K}, truth K = {K}")
    if estimate.sigma[0].dim != truth.sigma[0].dim:
        raise DimensionMismatch("estimate and truth dimension p differ")
    perm = match_components(estimate.sigma, truth.sigma)

    nu_est = np.asarray(estimate.nu)[perm]
    errors = {
        "nu_error": float(np.mean(np.abs(nu_est - np.asarray(truth.nu)))),
        "sigma_error": float(
            np.mean(
                [
                    np.sum((estimate.sigma[perm[k]].entries - truth.sigma[k].entries) ** 2)
                    for k in range(K)
                ]
            )
        ),
        "pi_error": None,
        "beta_error": None,
    }

    pi_true = _implied_pi(truth)
    pi_est = _implied_pi(estimate)
    if pi_true is not None and pi_est is not None:
        errors["pi_error"] = float(np.mean(np.abs(pi_est[perm] - pi_true)))

    if isinstance(truth, MoeParams) and isinstance(estimate, MoeParams):
        if estimate.q != truth.q:
            raise DimensionMismatch(
                f"estimate has q = {estimate.q}, truth q = {truth.q}"
            )
        beta_est = _referenced_beta(estimate.beta, perm)
        beta_true = np.concatenate([truth.beta, np.zeros((truth.q, 1))], axis=1)
        errors["beta_error"] = float(np.sum((beta_est - beta_true) ** 2) / K)
    return errors


_DEFAULT_STUDY_CONFIG = {
    "iterations": 2000,
    "burnin": 500,
    "thin": 1,
    "restarts": 3,
    "seed": 0,
}


def _ess_rows(chain, perm, family):
    """Truth-matched ESS entries mirroring the usual reporting set."""
    rows = {}
    for k in range(chain.K):
        rows[f"ess_nu_{k + 1}"] = ess(chain.nu[:, perm[k]])
        rows[f"ess_sigma_{k + 1}_1_1"] = ess(chain.sigma[:, perm[k], 0, 0])
    if family == "mixture":
        for k in range(chain.K):
            rows[f"ess_pi_{k + 1}"] = ess(chain.pi[:, perm[k]])
    else:
        full = np.concatenate(
            [chain.beta, np.zeros((chain.n_draws, chain.q, 1))], axis=2
        )[:, :, perm]
        referenced = full - full[:, :, -1][:, :, None]
        for k in range(chain.K - 1):
            rows[f"ess_beta_1_{k + 1}"] = ess(referenced[:, 0, k])
    return rows


def study_replicate(design, methods, rep, cfg):
    """One replicate of the study: generate, fit every method, evaluate.

    Deterministic in (cfg['seed'], rep) alone, so replicates can run in any
    order or in parallel without changing the table.
    """
    from .fitmethods import is_bayes, method_family

    rows = []

    def add(method, metric, value, failed):
        rows.append({
            "design": design.name, "rep": rep, "method": method,
            "metric": metric, "value": value, "failed": int(failed),
        })

    rng_rep = RngState(cfg["seed"]).derive(rep)
    data, _ = generate(design, rng_rep.derive(0))
    for im, method in enumerate(methods):
        rng_fit = rng_rep.derive(im + 1)
        try:
            report = _study_fit(data, design, method, cfg, rng_fit)
        except WishartMixError as exc:
            logging.getLogger(__name__).warning(
                "rep %d method %s failed: %s", rep, method, exc
            )
            add(method, "fit_failure", 1.0, 1)
            continue
        failed = not report.converged
        for metric, value in eval_errors(report.params, design.truth).items():
            if value is not None:
                add(method, metric, value, failed)
        if is_bayes(method):
            perm = match_components(report.params.sigma, design.truth.sigma)
            for metric, value in _ess_rows(report.chain, perm, method_family(method)).items():
                add(method, metric, value, failed)
    return rows


def run_study(design, methods, reps, configs=None):
    """Generate/fit/evaluate over replicates; long-format rows.

    Per-replicate failures (non-convergence, collapse) become rows with
    failed_flag = 1, never silent drops.
    """
    cfg = dict(_DEFAULT_STUDY_CONFIG)
    cfg.update(configs or {})
    if reps < 1:
        raise WishartMixError("reps must be >= 1")
    rows = []
    for rep in range(reps):
        rows.extend(study_replicate(design, methods, rep, cfg))
    return rows


def _study_fit(data, design, method, cfg, rng):
    from .em import EmConfig
    from .fitmethods import fit_method
    from .mcmc import SamplerConfig

    sampler_config = SamplerConfig(
        iterations=cfg["iterations"], burnin=cfg["burnin"], thin=cfg["thin"],
        seed=cfg["seed"],
    )
    em_config = EmConfig(restarts=cfg["restarts"])
    return fit_method(
        data, design.K, method, rng,
        sampler_config=sampler_config, em_config=em_config,
        compute_criteria=False,
    )
