"""Finite mixtures and mixtures-of-experts of Wishart distributions for
collections of symmetric positive definite matrices.

Fitting is available by MCMC (collapsed-label Gibbs with Metropolis steps
for the degrees of freedom and gating coefficients) and by maximum
likelihood (EM), with BIC/ICL/PSIS-LOO model selection, builtin simulation
designs, and a batch CLI (``wishartmix --help``).
"""

from .dataio import (
    FitReport,
    covdesc,
    load_dataset,
    read_response_table,
    save_dataset,
)
from .em import EmConfig, Responsibilities, e_step, m_step_beta, m_step_nu, m_step_sigma, run_em
from .errors import WishartMixError
from .fitmethods import METHODS, fit_method
from .mcmc import (
    Chain,
    SamplerConfig,
    chain_summary,
    ess,
    ess_report,
    posterior_means,
    relabel_chain,
    run_mixture_sampler,
    run_moe_sampler,
)
from .model import (
    Dataset,
    Hyperparams,
    MixtureParams,
    MoeParams,
    gating_probs,
    log_wishart_density,
    loglik_mixture,
    loglik_moe,
    model_dimension,
)
from .numcore import SpdMatrix, cholesky_logdet, log_multigamma, log_sum_exp, multidigamma, multitrigamma
from .sampling import (
    RngState,
    draw_categorical_from_logweights,
    draw_dirichlet,
    draw_inverse_wishart,
    draw_wishart,
)
from .selection import CriterionReport, PsisDiagnostics, bic, cluster_purity, elpd_loo, icl, select_k
from .simdata import SimDesign, builtin_design, eval_errors, generate, run_study

__version__ = "0.1.0"
