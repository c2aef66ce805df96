"""From replicated dose-response tables to covariance-descriptor clustering.

Mimics a drug-screening workflow: each item (drug) has replicate response
vectors over p doses; the per-item dose-dose covariance matrix becomes one
SPD observation. Items without enough complete replicates, or with a
degenerate covariance, are excluded with a logged reason. The retained
descriptors are then clustered and scored against the known item classes
with cluster purity.

Run:  python3 demos/05_covariance_descriptors.py
"""

import numpy as np

from wishartmix import (
    EmConfig,
    RngState,
    cluster_purity,
    covdesc,
    e_step,
    read_response_table,
    run_em,
)

rng = RngState(20240805)
gen = rng.generator
p = 4

# Two latent classes of items with different dose-dose covariance shapes.
idx = np.arange(p)
class_cov = {
    "steep": 0.9 ** np.abs(idx[:, None] - idx[None, :]) * 0.8,
    "flat": 0.2 ** np.abs(idx[:, None] - idx[None, :]) * 1.6,
}

lines = ["item_id,replicate_id,dose_index,response"]
true_class = {}
for i in range(60):
    label = "steep" if i % 2 == 0 else "flat"
    item = f"drug{i:02d}"
    true_class[item] = label
    # every sixth item falls below the p+1 completeness floor
    n_reps = 3 if i % 6 == 5 else int(gen.integers(8, 40))
    responses = gen.multivariate_normal(np.zeros(p), class_cov[label],
                                        size=n_reps)
    for j in range(n_reps):
        for d in range(p):
            lines.append(f"{item},r{j},{d + 1},{float(responses[j, d])!r}")

with open("/tmp/demo_responses.csv", "w") as handle:
    handle.write("\n".join(lines) + "\n")

table = read_response_table("/tmp/demo_responses.csv")
data, report = covdesc(table)
print(f"retained {len(report['retained'])} of {len(table.items)} items; "
      f"exclusions: {len(report['excluded'])}")
for item, reason in list(report["excluded"].items())[:3]:
    print("  e.g.", item, "->", reason)

fit = run_em(data, 2, "mixture", EmConfig(restarts=3), rng.derive(1))
resp = e_step(data, fit.params)
assignments = resp.r.argmax(axis=1)
labels = [true_class[item] for item in report["retained"]]
print("\nEM mixture fit on the descriptors: nu =", np.round(fit.params.nu, 2))
print("cluster purity against the true classes:",
      round(cluster_purity(assignments.tolist(), labels), 3))
