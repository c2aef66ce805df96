"""Bayesian Wishart mixture: simulate, run the Gibbs sampler, summarize.

Generates a K=3 dataset from the builtin p=2 design, fits it with the
collapsed-label Gibbs-within-MH sampler, and reports permutation-matched
parameter errors, acceptance rates, and effective sample sizes.

Run:  python3 demos/02_mixture_mcmc.py   (about half a minute)
"""

import numpy as np

from wishartmix import (
    Hyperparams,
    RngState,
    SamplerConfig,
    builtin_design,
    ess_report,
    eval_errors,
    generate,
    posterior_means,
    relabel_chain,
    run_mixture_sampler,
)

design = builtin_design("mix-p2").with_n(500)
print("truth: pi =", design.truth.pi, " nu =", design.truth.nu)

rng = RngState(20240802)
data, true_labels = generate(design, rng.derive(0))

hyper = Hyperparams.defaults(K=3, p=2)
config = SamplerConfig(iterations=4000, burnin=1000, seed=20240802)
chain = run_mixture_sampler(data, hyper, 3, config, rng.derive(1))

# Align component labels across draws before summarizing.
chain = relabel_chain(chain)
params = posterior_means(chain)
print("\nposterior means: pi =", np.round(params.pi, 3),
      " nu =", np.round(params.nu, 2))

errors = eval_errors(params, design.truth)
print("permutation-matched errors:",
      {k: round(v, 4) for k, v in errors.items() if v is not None})

print("\nnu acceptance rates:", np.round(chain.accept_rate_nu(), 3),
      "(adapted toward 0.3 during burn-in, frozen after)")

ess = ess_report(chain)
print("ESS:", {k: round(v) for k, v in ess.items() if k.startswith("nu")})
print("log-likelihood trace finite:", bool(np.all(np.isfinite(chain.loglik_trace))))
