"""File formats: dataset JSON, fit reports, chain CSV, criterion and study
tables, and ingestion of long-format replicate-response tables into
covariance descriptors.

JSON carries datasets and models (self-describing, schema-versioned); CSV
carries traces and tables. All writes are atomic (temp file + rename).
Floats are serialized in decimal with full round-trip precision, so
write-then-read reproduces matrices bit-exactly.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatasetFormatError,
    MalformedTable,
    NoItemsRetained,
    NotPositiveDefinite,
)
from .model import Dataset, MixtureParams, MoeParams
from .numcore import SpdMatrix

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# atomic writers

def _atomic_write_text(text, path):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(obj, path):
    _atomic_write_text(json.dumps(obj, indent=2) + "\n", path)


# ---------------------------------------------------------------------------
# dataset files

def dataset_to_dict(data):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "p": data.p,
        "n": data.n,
        "matrices": [s.entries.ravel().tolist() for s in data.matrices],
    }
    if data.has_covariates:
        doc["covariates"] = data.covariates.tolist()
        doc["covariate_names"] = data.covariate_names or (
            ["intercept"] + [f"x{j}" for j in range(2, data.q + 1)]
        )
    return doc


def dataset_from_dict(doc):
    """Validate and build a Dataset; errors carry the offending position.

    Matrices are validated strictly (no jitter) at load time: jitter is an
    inference-time device and must not silently repair input data.
    """
    if not isinstance(doc, dict):
        raise DatasetFormatError("dataset document must be a JSON object")
    for key in ("schema_version", "p", "n", "matrices"):
        if key not in doc:
            raise DatasetFormatError(f"dataset document is missing {key!r}")
    p = doc["p"]
    n = doc["n"]
    if not (isinstance(p, int) and p >= 1 and isinstance(n, int) and n >= 1):
        raise DatasetFormatError(f"invalid dimensions p = {p!r}, n = {n!r}")
    raw = doc["matrices"]
    if len(raw) != n:
        raise DatasetFormatError(f"matrices has {len(raw)} entries, expected n = {n}")
    mats = []
    for i, flat in enumerate(raw):
        if len(flat) != p * p:
            raise DatasetFormatError(
                f"matrices[{i}] has length {len(flat)}, expected p^2 = {p * p}"
            )
        arr = np.asarray(flat, dtype=float).reshape(p, p)
        if not np.all(np.isfinite(arr)):
            raise DatasetFormatError(f"matrices[{i}] contains non-finite values")
        try:
            mat = SpdMatrix(arr, allow_jitter=False)
            mat.chol  # factorization is lazy; force the validation here
        except NotPositiveDefinite:
            raise DatasetFormatError(
                f"matrices[{i}] is not positive definite"
            ) from None
        except Exception as exc:
            raise DatasetFormatError(f"matrices[{i}]: {exc}") from None
        mats.append(mat)
    covariates = doc.get("covariates")
    names = doc.get("covariate_names")
    if covariates is not None:
        if len(covariates) != n:
            raise DatasetFormatError(
                f"covariates has {len(covariates)} rows, expected n = {n}"
            )
        widths = {len(row) for row in covariates}
        if len(widths) != 1:
            raise DatasetFormatError("covariate rows have inconsistent lengths")
        if names is not None and names[0] != "intercept":
            raise DatasetFormatError(
                "first covariate column must be named 'intercept'"
            )
    return Dataset(mats, covariates=covariates, covariate_names=names)


def save_dataset(data, path):
    write_json_atomic(dataset_to_dict(data), path)


def load_dataset(path):
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not valid JSON ({exc})") from None
    return dataset_from_dict(doc)


# ---------------------------------------------------------------------------
# parameter and fit-report serialization

def params_to_dict(params):
    doc = {
        "K": params.K,
        "nu": np.asarray(params.nu).tolist(),
        "sigma": [s.entries.tolist() for s in params.sigma],
    }
    if isinstance(params, MoeParams):
        doc["family"] = "moe"
        doc["beta"] = params.beta.tolist()
    else:
        doc["family"] = "mixture"
        doc["pi"] = np.asarray(params.pi).tolist()
    if params.labels is not None:
        doc["labels"] = np.asarray(params.labels).tolist()
    return doc


def params_from_dict(doc):
    sigma = [SpdMatrix(np.asarray(s, dtype=float)) for s in doc["sigma"]]
    labels = np.asarray(doc["labels"]) if "labels" in doc else None
    if doc.get("family") == "moe":
        return MoeParams(K=doc["K"], beta=np.asarray(doc["beta"], float),
                         nu=np.asarray(doc["nu"], float), sigma=sigma, labels=labels)
    return MixtureParams(K=doc["K"], pi=np.asarray(doc["pi"], float),
                         nu=np.asarray(doc["nu"], float), sigma=sigma, labels=labels)


@dataclass
class FitReport:
    """Point estimates plus per-method evidence: the log-likelihood history
    for EM fits, sampler diagnostics for Bayesian fits, and any
    selection-criterion values computed for the fit."""

    method: str
    family: str
    K: int
    params: object
    loglik: float
    loglik_history: list = field(default_factory=list)
    restart_index: int = None
    converged: bool = True
    warnings: list = field(default_factory=list)
    criteria: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    chain: object = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "method": self.method,
            "family": self.family,
            "K": self.K,
            "params": params_to_dict(self.params),
            "loglik": self.loglik,
            "loglik_history": list(self.loglik_history),
            "restart_index": self.restart_index,
            "converged": bool(self.converged),
            "warnings": list(self.warnings),
            "criteria": self.criteria,
            "diagnostics": self.diagnostics,
        }


def save_fit_report(report, path):
    write_json_atomic(report.to_dict(), path)


# ---------------------------------------------------------------------------
# chain CSV

def chain_to_csv(chain, path):
    """One row per kept draw; columns pi_k / beta_j_k, nu_k, sigma_k_i_j,
    loglik. Floats use repr for exact round-tripping."""
    from .mcmc import _flat_param_traces

    cols = _flat_param_traces(chain)
    cols["loglik"] = chain.kept_loglik
    names = list(cols)
    lines = [",".join(names)]
    stacked = np.column_stack([cols[c] for c in names])
    for row in stacked:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write_text("\n".join(lines) + "\n", path)


def load_chain_traces(path):
    """Chain CSV back into a name -> trace mapping."""
    with open(path) as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedTable(f"{path}: empty chain CSV") from None
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise MalformedTable(f"{path}: ragged chain CSV")
    return {name: data[:, j] for j, name in enumerate(header)}


# ---------------------------------------------------------------------------
# criterion and study tables

def criterion_report_to_dict(report):
    return {
        "K": list(report.ks),
        "criteria": report.table,
        "se": report.se,
        "chosen": report.chosen,
        "recommended": report.recommended,
    }


def criterion_report_to_csv(report, path):
    names = list(report.table)
    lines = [",".join(["K"] + names)]
    for i, k in enumerate(report.ks):
        vals = [repr(float(report.table[c][i])) for c in names]
        lines.append(",".join([str(k)] + vals))
    _atomic_write_text("\n".join(lines) + "\n", path)


STUDY_COLUMNS = ("design", "rep", "method", "metric", "value", "failed_flag")


def study_rows_to_csv(rows, path):
    lines = [",".join(STUDY_COLUMNS)]
    for row in rows:
        lines.append(
            f"{row['design']},{row['rep']},{row['method']},{row['metric']},"
            f"{repr(float(row['value']))},{int(row['failed'])}"
        )
    _atomic_write_text("\n".join(lines) + "\n", path)


# ---------------------------------------------------------------------------
# response tables -> covariance descriptors

_RESPONSE_HEADER = ["item_id", "replicate_id", "dose_index", "response"]


class ResponseTable:
    """Long-format replicate responses grouped by item, in input order."""

    def __init__(self, items, p):
        self.items = items  # {item_id: {replicate_id: {dose: response}}}
        self.p = p


def read_response_table(path):
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedTable(f"{path}: empty response table") from None
        if [h.strip() for h in header] != _RESPONSE_HEADER:
            raise MalformedTable(
                f"{path}: header must be {','.join(_RESPONSE_HEADER)}, got {','.join(header)}"
            )
        items = {}
        max_dose = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedTable(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            item, rep, dose_s, resp_s = (v.strip() for v in row)
            try:
                dose = int(dose_s)
            except ValueError:
                raise MalformedTable(
                    f"{path}:{lineno}: dose_index {dose_s!r} is not an integer"
                ) from None
            if dose < 1:
                raise MalformedTable(f"{path}:{lineno}: dose_index must be >= 1")
            try:
                resp = float(resp_s)
            except ValueError:
                raise MalformedTable(
                    f"{path}:{lineno}: response {resp_s!r} is not a number"
                ) from None
            reps = items.setdefault(item, {})
            doses = reps.setdefault(rep, {})
            if dose in doses:
                raise MalformedTable(
                    f"{path}:{lineno}: duplicate (item {item!r}, replicate {rep!r}, dose {dose})"
                )
            doses[dose] = resp
            max_dose = max(max_dose, dose)
    if not items:
        raise MalformedTable(f"{path}: no data rows")
    return ResponseTable(items, max_dose)


def covdesc(table, min_replicates=None):
    """Per-item empirical dose-dose covariance of replicate response vectors.

    Only replicates covering the full dose set 1..p count; items with fewer
    than max(p + 1, min_replicates) complete replicates are excluded, as are
    items whose covariance is not strictly positive definite. Returns
    (Dataset, report) where the report accounts for every input item once.
    """
    p = table.p
    floor = max(p + 1, min_replicates or 0)
    full = frozenset(range(1, p + 1))
    mats = []
    retained = []
    excluded = {}
    for item, reps in table.items.items():
        complete = [d for d in reps.values() if frozenset(d) == full]
        n_d = len(complete)
        if n_d < floor:
            excluded[item] = (
                f"only {n_d} complete replicates of {len(reps)} (need >= {floor})"
            )
            continue
        resp = np.array([[d[j] for j in range(1, p + 1)] for d in complete])
        centered = resp - resp.mean(axis=0)
        s = centered.T @ centered / (n_d - 1)
        try:
            mat = SpdMatrix(s, allow_jitter=False)
            mat.chol  # force the (lazy) strict factorization
        except NotPositiveDefinite:
            excluded[item] = "degenerate covariance"
            continue
        mats.append(mat)
        retained.append(item)
    if not mats:
        raise NoItemsRetained(
            f"all {len(table.items)} items were excluded: "
            + "; ".join(f"{k}: {v}" for k, v in excluded.items())
        )
    report = {"p": p, "retained": retained, "excluded": excluded}
    return Dataset(mats), report
