"""Fidelity and utility metrics for synthetic tables.

Shape (KST / TVD per column), Trend (Pearson / contingency per column pair),
a logistic-regression detection score, and machine-learning efficiency with
linear downstream models. KST, TVD and contingency distances are computed
from integer counts with a single final division, so they are correctly
rounded values of the exact rational statistic.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import CATEGORICAL, NUMERICAL, TableData, concat, write_csv
from .errors import MetricError
from .preprocess import fit_preprocess
from .rng import derive_seed, generator

REPORT_VERSION = 1


class UndefinedCorrelation(MetricError):
    pass


# ---------------------------------------------------------------- column metrics


def kst(real, synth) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup_x |F_r(x) - F_s(x)|."""
    r = np.sort(np.asarray(real, dtype=np.float64))
    s = np.sort(np.asarray(synth, dtype=np.float64))
    if r.size == 0 or s.size == 0:
        raise MetricError("kst needs two non-empty samples")
    n, m = r.size, s.size
    pts = np.concatenate([r, s])
    cr = np.searchsorted(r, pts, side="right").astype(np.int64)
    cs = np.searchsorted(s, pts, side="right").astype(np.int64)
    if n * m < 2**62:
        gap = int(np.max(np.abs(cr * m - cs * n)))
    else:
        gap = max(abs(int(i) * m - int(j) * n) for i, j in zip(cr, cs))
    return gap / (n * m)


def _count_distance(cr: Counter, cs: Counter, n: int, m: int) -> float:
    keys = set(cr) | set(cs)
    total = sum(abs(cr.get(k, 0) * m - cs.get(k, 0) * n) for k in keys)
    return total / (2 * n * m)


def tvd(real, synth) -> float:
    """Total variation distance between category frequency tables."""
    real, synth = list(real), list(synth)
    if not real or not synth:
        raise MetricError("tvd needs two non-empty samples")
    return _count_distance(Counter(real), Counter(synth), len(real), len(synth))


def contingency_similarity(real_a, real_b, synth_a, synth_b) -> float:
    """TVD between the joint (a, b) frequency tables of real and synthetic data."""
    if len(real_a) != len(real_b) or len(synth_a) != len(synth_b):
        raise MetricError("paired columns must have equal lengths")
    if len(real_a) == 0 or len(synth_a) == 0:
        raise MetricError("contingency_similarity needs non-empty columns")
    cr = Counter(zip(real_a, real_b))
    cs = Counter(zip(synth_a, synth_b))
    return _count_distance(cr, cs, len(real_a), len(synth_a))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise MetricError("pearson needs two equal-length samples of size >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelation("correlation is undefined for a constant column")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def _check_schemas(real: TableData, synth: TableData) -> None:
    rs, ss = real.schema, synth.schema
    for c in rs.columns:
        if c.name not in ss.names:
            raise MetricError(f"synthetic table lacks column {c.name!r}")
        if ss.column(c.name).kind != c.kind:
            raise MetricError(f"column {c.name!r} has kind {c.kind} in real data but {ss.column(c.name).kind} in synthetic data")
    for name in ss.names:
        if name not in rs.names:
            raise MetricError(f"synthetic table has unexpected column {name!r}")


def shape_score(real: TableData, synth: TableData) -> tuple[float, dict]:
    """Percent error: mean over columns of KST (numerical) or TVD (categorical)."""
    _check_schemas(real, synth)
    details = {}
    for c in real.schema.columns:
        if c.kind == NUMERICAL:
            details[c.name] = {"kind": c.kind, "metric": "kst", "score": kst(real[c.name], synth[c.name])}
        else:
            details[c.name] = {"kind": c.kind, "metric": "tvd", "score": tvd(real[c.name], synth[c.name])}
    return 100.0 * float(np.mean([d["score"] for d in details.values()])), details


def quartile_bins(real_values, values) -> np.ndarray:
    """Bin labels 0..3 from quartile edges fitted on the real column."""
    edges = np.quantile(np.asarray(real_values, dtype=np.float64), [0.25, 0.5, 0.75])
    return np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right")


def trend_score(real: TableData, synth: TableData) -> tuple[float, list]:
    """Percent error averaged over all unordered column pairs.

    num/num pairs score half the absolute Pearson difference, cat/cat pairs
    the contingency distance, and mixed pairs the contingency distance after
    binning the numerical column into real-data quartiles. Pairs whose
    correlation is undefined are recorded with ``skipped`` and left out.
    """
    _check_schemas(real, synth)
    if len(real.schema.columns) - 1 < 2:
        raise MetricError("trend needs at least two non-target columns")
    pairs = []
    for a, b in combinations(real.schema.columns, 2):
        rec = {"a": a.name, "b": b.name, "kind": f"{a.kind[:3]}/{b.kind[:3]}", "score": None, "skipped": False}
        if a.kind == NUMERICAL and b.kind == NUMERICAL:
            try:
                rho_r = pearson(real[a.name], real[b.name])
                rho_s = pearson(synth[a.name], synth[b.name])
                rec["score"] = 0.5 * abs(rho_r - rho_s)
            except UndefinedCorrelation:
                rec["skipped"] = True
        else:
            cols = []
            for col in (a, b):
                if col.kind == NUMERICAL:
                    cols.append((quartile_bins(real[col.name], real[col.name]),
                                 quartile_bins(real[col.name], synth[col.name])))
                else:
                    cols.append((real[col.name], synth[col.name]))
            rec["score"] = contingency_similarity(cols[0][0], cols[1][0], cols[0][1], cols[1][1])
        pairs.append(rec)
    scored = [p["score"] for p in pairs if not p["skipped"]]
    if not scored:
        raise MetricError("no column pair could be scored")
    return 100.0 * float(np.mean(scored)), pairs


# ---------------------------------------------------------------- linear models


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get half credit)."""
    y = np.asarray(y_true).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass
class LinearModel:
    """Weights act on standardized features."""

    weights: np.ndarray
    bias: float
    standardizer: Standardizer
    n_iter: int = 0
    grad_norm: float = 0.0

    def decision(self, X) -> np.ndarray:
        return self.standardizer(X) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision(X)))

    predict = decision

    @property
    def coef(self) -> np.ndarray:
        """Weights in the original feature scale."""
        return self.weights / self.standardizer.scale

    @property
    def intercept(self) -> float:
        return float(self.bias - self.coef @ self.standardizer.mean)


def _logistic_objective(w, b, X, y, l2):
    z = X @ w + b
    # log(1 + e^z) - y z, stable for both signs
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(w @ w)
    return loss, z


def fit_logistic(X, y, l2: float = 1e-3, tol: float = 1e-6, max_iter: int = 10000) -> LinearModel:
    """L2-regularized logistic regression (bias unpenalized).

    Damped Newton steps with Armijo backtracking, stopped once the gradient
    norm of the regularized mean loss drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] < 2:
        raise MetricError("fit_logistic needs a 2-D feature matrix with >= 2 matching labels")
    if np.all(y == y[0]):
        raise MetricError("fit_logistic needs both classes present")
    std = Standardizer.fit(X)
    Xs = std(X)
    n, d = Xs.shape
    A = np.hstack([Xs, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    loss, z = _logistic_objective(theta[:-1], theta[-1], Xs, y, l2)
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-z))
        grad = A.T @ (p - y) / n + reg * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(reg) + 1e-12 * np.eye(d + 1)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad
        if not float(grad @ step) > 0:
            step = grad
        lr = 1.0
        while True:
            cand = theta - lr * step
            new_loss, new_z = _logistic_objective(cand[:-1], cand[-1], Xs, y, l2)
            if new_loss <= loss - 1e-4 * lr * float(grad @ step) or lr < 1e-12:
                break
            lr *= 0.5
        if lr < 1e-12:
            break
        theta, loss, z = cand, new_loss, new_z
    return LinearModel(theta[:-1].copy(), float(theta[-1]), std, it, gnorm)


def fit_ridge(X, y, l2: float = 1.0) -> LinearModel:
    """Ridge regression on standardized features via the normal equations; intercept unpenalized."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] < 2:
        raise MetricError("fit_ridge needs a 2-D feature matrix with >= 2 matching targets")
    std = Standardizer.fit(X)
    Xs = std(X)
    y_mean = float(y.mean())
    G = Xs.T @ Xs + l2 * np.eye(Xs.shape[1])
    w = np.linalg.solve(G, Xs.T @ (y - y_mean))
    # standardized columns are centred, so the intercept is the target mean
    return LinearModel(w, y_mean, std)


# ---------------------------------------------------------------- detection score


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    fold = np.empty(y.size, dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % k
    return fold


def c2st(real: TableData, synth: TableData, seed: int = 0, folds: int = 5, l2: float = 1e-3) -> dict:
    """Detection score 2 * (1 - AUC), clamped to [0, 1]; 1 means indistinguishable.

    Rows are labelled real=0 / synthetic=1 and encoded with quantile maps and
    vocabularies fitted on the union of both tables (target column included).
    The AUC is the mean over stratified cross-validation folds.
    """
    _check_schemas(real, synth)
    if real.n_rows < 20 or synth.n_rows < 20:
        raise MetricError("c2st needs at least 20 rows in each table")
    union = concat([real, TableData(real.schema, dict(synth.columns))])
    state = fit_preprocess(union)
    X = state.encode(union)
    y = np.concatenate([np.zeros(real.n_rows), np.ones(synth.n_rows)])
    fold = _stratified_folds(y, folds, generator(seed, "c2st-folds"))
    aucs = []
    for f in range(folds):
        train, test = fold != f, fold == f
        if len(np.unique(y[train])) < 2 or len(np.unique(y[test])) < 2:
            raise MetricError(f"c2st fold {f} contains a single class")
        model = fit_logistic(X[train], y[train], l2)
        aucs.append(roc_auc(y[test], model.decision(X[test])))
    auc = float(np.mean(aucs))
    return {"score": min(1.0, max(0.0, 2.0 * (1.0 - auc))), "auc": auc, "fold_aucs": aucs}


# ---------------------------------------------------------------- machine learning efficiency


LOGISTIC_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
RIDGE_GRID = (1e-6, 1e-4, 1e-2, 1.0, 100.0)


def _feature_encoder(synth_train: TableData, others):
    """Raw numerical values plus one-hot categoricals (vocabulary from all tables).

    Numerical columns stay on their original scale (the linear models
    standardize internally) so linear relations in the data stay linear.
    """
    schema = synth_train.schema
    cols = [c for c in schema.columns if not c.target]
    vocabs = {}
    for c in cols:
        if c.kind == CATEGORICAL:
            seen = set(synth_train[c.name])
            for t in others:
                seen |= set(t[c.name])
            vocabs[c.name] = sorted(seen)

    def encode(t: TableData) -> np.ndarray:
        parts = []
        for c in cols:
            if c.kind == NUMERICAL:
                parts.append(np.asarray(t[c.name], dtype=np.float64)[:, None])
            else:
                idx = np.searchsorted(vocabs[c.name], t[c.name])
                parts.append(np.eye(len(vocabs[c.name]))[idx])
        return np.hstack(parts)

    return encode, schema.target.name


def _class_auc(model_scores: dict, labels: np.ndarray, classes) -> float:
    if len(classes) == 2:
        return roc_auc(labels == classes[1], model_scores[classes[1]])
    aucs = [roc_auc(labels == c, model_scores[c]) for c in classes if 0 < np.sum(labels == c) < labels.size]
    return float(np.mean(aucs))


def _fit_classifier(X, labels, classes, l2):
    positives = classes[1:] if len(classes) == 2 else classes
    return {c: fit_logistic(X, (labels == c).astype(float), l2) for c in positives}


def mle(synth_train: TableData, real_val: TableData, real_test: TableData,
        repeats: int = 20, seed: int = 0) -> dict:
    """Train-on-synthetic, test-on-real downstream score.

    Classification uses logistic regression and reports ROC-AUC (macro
    one-vs-rest beyond two classes); regression uses ridge regression and
    reports RMSE. Each repeat refits on a seeded bootstrap resample of the
    synthetic rows; the regularization strength is chosen on ``real_val``.
    """
    for t in (real_val, real_test):
        _check_schemas(t, synth_train)
    if repeats < 1:
        raise MetricError("repeats must be at least 1")
    encode, target = _feature_encoder(synth_train, (real_val, real_test))
    task = synth_train.schema.task
    X_syn, X_val, X_test = (encode(t) for t in (synth_train, real_val, real_test))
    y_syn, y_val, y_test = synth_train[target], real_val[target], real_test[target]

    if task == "classification":
        classes = sorted(set(y_syn) | set(y_val) | set(y_test))
        if len(set(y_syn)) < 2:
            raise MetricError(f"synthetic target column {target!r} has a single class")
    scores, chosen = [], []
    for r in range(repeats):
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, f"mle-repeat-{r}")))
        idx = rng.integers(0, X_syn.shape[0], size=X_syn.shape[0]) if repeats > 1 else np.arange(X_syn.shape[0])
        Xb, yb = X_syn[idx], y_syn[idx]
        if task == "classification":
            if len(set(yb)) < 2:
                raise MetricError(f"bootstrap resample {r} of the synthetic target has a single class")
            best = None
            for l2 in LOGISTIC_GRID:
                models = _fit_classifier(Xb, yb, classes, l2)
                val = _class_auc({c: m.decision(X_val) for c, m in models.items()}, y_val, classes)
                if best is None or val > best[0]:
                    best = (val, l2, models)
            _, l2, models = best
            scores.append(_class_auc({c: m.decision(X_test) for c, m in models.items()}, y_test, classes))
        else:
            best = None
            for l2 in RIDGE_GRID:
                model = fit_ridge(Xb, yb, l2)
                val = float(np.sqrt(np.mean((model.predict(X_val) - y_val) ** 2)))
                if best is None or val < best[0]:
                    best = (val, l2, model)
            _, l2, model = best
            scores.append(float(np.sqrt(np.mean((model.predict(X_test) - y_test) ** 2))))
        chosen.append(l2)
    return {
        "metric": "auc" if task == "classification" else "rmse",
        "mean": float(np.mean(scores)),
        "std": float(np.std(scores)),
        "repeats": repeats,
        "scores": scores,
        "l2": chosen,
    }


def mle_export(synth_train: TableData, real_val: TableData, real_test: TableData, out_dir) -> dict:
    """Write the three MLE tables as CSVs for an external downstream learner."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, t in (("synth_train", synth_train), ("real_val", real_val), ("real_test", real_test)):
        p = out / f"{name}.csv"
        write_csv(t, p)
        paths[name] = str(p)
    return paths


# ---------------------------------------------------------------- report


@dataclass
class MetricsReport:
    shape: float
    shape_details: dict
    trend: float
    trend_details: list
    c2st: float
    c2st_auc: float
    mle: dict | None = None
    n_real: int = 0
    n_synth: int = 0
    version: int = REPORT_VERSION

    def __post_init__(self):
        if not 0.0 <= self.shape <= 100.0 or not 0.0 <= self.trend <= 100.0:
            raise MetricError("shape and trend must lie in [0, 100]")
        if not 0.0 <= self.c2st <= 1.0:
            raise MetricError("c2st must lie in [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> "MetricsReport":
        expected = set(cls.__dataclass_fields__)
        if set(doc) != expected:
            raise MetricError(f"report fields differ: missing {sorted(expected - set(doc))}, unexpected {sorted(set(doc) - expected)}")
        if doc["version"] != REPORT_VERSION:
            raise MetricError(f"report version {doc['version']} is not supported (expected {REPORT_VERSION})")
        return cls(**doc)

    @classmethod
    def loads(cls, text: str) -> "MetricsReport":
        return cls.from_json(json.loads(text))


def evaluate(real: TableData, synth: TableData, seed: int = 0,
             mle_val: TableData | None = None, mle_test: TableData | None = None,
             repeats: int = 20) -> MetricsReport:
    """Shape, Trend and detection score of ``synth`` against ``real``.

    When ``mle_val`` and ``mle_test`` are given, ``synth`` also serves as the
    downstream training set for the utility score.
    """
    shape, shape_details = shape_score(real, synth)
    trend, trend_details = trend_score(real, synth)
    det = c2st(real, synth, seed=derive_seed(seed, "c2st") & 0xFFFFFFFF)
    util = None
    if mle_val is not None and mle_test is not None:
        util = mle(synth, mle_val, mle_test, repeats=repeats, seed=derive_seed(seed, "mle"))
    return MetricsReport(shape, shape_details, trend, trend_details, det["score"], det["auc"], util,
                         real.n_rows, synth.n_rows)


def plot_data(real: TableData, synth: TableData, bins: int = 20) -> dict:
    """Per-column histogram data: shared bin edges plus counts for numerical
    columns, category frequency tables for categorical ones."""
    _check_schemas(real, synth)
    out = {}
    for c in real.schema.columns:
        if c.kind == NUMERICAL:
            lo = float(min(real[c.name].min(), synth[c.name].min()))
            hi = float(max(real[c.name].max(), synth[c.name].max()))
            edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
            out[c.name] = {
                "kind": c.kind,
                "bin_edges": edges.tolist(),
                "real_counts": np.histogram(real[c.name], edges)[0].tolist(),
                "synth_counts": np.histogram(synth[c.name], edges)[0].tolist(),
            }
        else:
            cats = sorted(set(real[c.name]) | set(synth[c.name]))
            rc, sc = Counter(real[c.name]), Counter(synth[c.name])
            out[c.name] = {
                "kind": c.kind,
                "categories": cats,
                "real_freq": [rc.get(k, 0) / real.n_rows for k in cats],
                "synth_freq": [sc.get(k, 0) / synth.n_rows for k in cats],
            }
    return out


def write_plot_data(real: TableData, synth: TableData, out_dir, bins: int = 20) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (name, doc) in enumerate(plot_data(real, synth, bins).items()):
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
        p = out / f"{i:02d}_{safe}.json"
        p.write_text(json.dumps({"column": name, **doc}, indent=2))
        written.append(str(p))
    return written
