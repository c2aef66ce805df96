"""One dispatch point for the four estimation methods.

Shared by the CLI, the K-selection driver, and the simulation study harness
so that every caller fits, relabels, and scores a model the same way.
"""

from __future__ import annotations

import numpy as np

from .dataio import FitReport
from .em import EmConfig, e_step, run_em
from .errors import ConfigError
from .mcmc import (
    SamplerConfig,
    chain_summary,
    posterior_means,
    relabel_chain,
    run_mixture_sampler,
    run_moe_sampler,
)
from .model import Hyperparams, loglik_mixture, loglik_moe
from .selection import bic, icl

METHODS = ("bayes", "em", "bayes-moe", "em-moe")


def method_family(method):
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    return "moe" if method.endswith("-moe") else "mixture"


def is_bayes(method):
    method_family(method)  # validate the name
    return method.startswith("bayes")


def prepare_data(data, method):
    """MoE methods need covariates; bare datasets get an intercept column.

    Returns (dataset, note) where the note reports the auto-insertion (the
    intercept-only gating reduces the MoE model to the plain mixture).
    """
    if method_family(method) == "moe" and not data.has_covariates:
        return data.with_intercept_only(), "inserted intercept-only covariate column"
    return data, None


def fit_method(data, K, method, rng, sampler_config=None, em_config=None,
               hyper=None, compute_criteria=True):
    """Fit one method and return a FitReport (chain attached for Bayes fits).

    Bayesian point estimates are post-relabeling posterior means; BIC/ICL for
    Bayesian fits plug those posterior means into the observed-data
    log-likelihood and responsibilities.
    """
    family = method_family(method)
    data, note = prepare_data(data, method)
    if is_bayes(method):
        hyper = hyper or Hyperparams.defaults(K, data.p)
        config = sampler_config or SamplerConfig(iterations=2000, burnin=500,
                                                 seed=rng.seed)
        runner = run_moe_sampler if family == "moe" else run_mixture_sampler
        chain = relabel_chain(runner(data, hyper, K, config, rng))
        params = posterior_means(chain)
        loglik = loglik_moe(data, params) if family == "moe" else loglik_mixture(data, params)
        summary = chain_summary(chain)
        report = FitReport(
            method=method,
            family=family,
            K=K,
            params=params,
            loglik=loglik,
            diagnostics={"acceptance": summary["acceptance"], "ess": summary["ess"]},
            chain=chain,
        )
    else:
        report = run_em(data, K, family, config=em_config or EmConfig(), rng=rng)
        report.method = method
    if note:
        report.warnings = list(report.warnings) + [note]
    if compute_criteria:
        q = data.q if family == "moe" else 0
        value = bic(report.loglik, K, data.p, q, family, data.n)
        resp = e_step(data, report.params)
        report.criteria = {"bic": value, "icl": icl(value, resp)}
    return report
