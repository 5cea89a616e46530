"""Correlation metrics, logistic mapping, content-separated splits and significance tests."""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from ._atomic import atomic_open
from .errors import (
    ChipQAError,
    DegenerateInput,
    DegenerateRanks,
    LengthMismatch,
    TooFewSamples,
)

TRAIN_FRACTION = 0.8
SUPERIOR, INFERIOR, INDISTINCT = "superior", "inferior", "indistinct"


def _pair(a, b, min_len: int):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size} values")
    if a.size < min_len:
        raise TooFewSamples(f"{a.size} values, need {min_len}")
    return a, b


def pearson(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(np.clip((a @ b) / den, -1.0, 1.0)) if den > 0 else 0.0


def srocc(a, b) -> float:
    """Spearman correlation: Pearson correlation of mid-ranks."""
    a, b = _pair(a, b, 3)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateRanks("all values equal on one side")
    return pearson(stats.rankdata(a), stats.rankdata(b))


@dataclass(frozen=True)
class LogisticParams:
    b1: float
    b2: float
    b3: float
    b4: float
    # set when the logistic fit lost to a straight line and a linear map is used instead
    linear: Optional[tuple] = None
    residual: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.linear is not None

    def __call__(self, q):
        q = np.asarray(q, dtype=np.float64)
        if self.linear is not None:
            slope, icpt = self.linear
            return slope * q + icpt
        return logistic(q, self.b1, self.b2, self.b3, self.b4)


def logistic(q, b1, b2, b3, b4):
    z = np.clip(-(q - b3) / max(abs(b4), 1e-12), -700, 700)
    return b2 + (b1 - b2) / (1.0 + np.exp(z))


def fit_logistic(pred, mos) -> LogisticParams:
    """Least-squares 4-parameter logistic, constrained to be non-decreasing.

    Falls back to a non-decreasing straight line when that fits better.
    """
    q, m = _pair(pred, mos, 5)
    if np.ptp(m) == 0:
        raise DegenerateInput("mos has zero variance")
    sd = float(q.std()) or 1.0
    # parametrise as (b2, b1 - b2 >= 0, b3, b4 > 0) so the curve is increasing
    x0 = np.array([m.min(), m.max() - m.min(), q.mean(), sd])
    lower = [-np.inf, 0.0, -np.inf, 1e-9 * sd]

    def resid(p):
        return logistic(q, p[0] + p[1], p[0], p[2], p[3]) - m

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = optimize.least_squares(resid, x0, bounds=(lower, np.inf), method="trf",
                                     x_scale="jac", max_nfev=2000)
    p = sol.x
    log_res = float(np.sum(resid(p) ** 2))

    slope, icpt = np.polyfit(q, m, 1) if np.ptp(q) > 0 else (0.0, m.mean())
    if slope < 0:
        slope, icpt = 0.0, float(m.mean())
    lin_res = float(np.sum((slope * q + icpt - m) ** 2))
    if not np.isfinite(log_res) or log_res > lin_res:
        return LogisticParams(float(m.max()), float(m.min()), float(q.mean()), sd,
                              linear=(float(slope), float(icpt)), residual=lin_res)
    return LogisticParams(float(p[0] + p[1]), float(p[0]), float(p[2]), float(p[3]),
                          residual=log_res)


def lcc(pred, mos) -> float:
    """Pearson correlation after the monotone logistic mapping.

    A positive-slope linear fallback whose slope is 0 would map every
    prediction to one value; the raw predictions are correlated instead,
    which is the identity map.
    """
    q, m = _pair(pred, mos, 5)
    params = fit_logistic(q, m)
    mapped = params(q)
    if params.linear is not None and params.linear[0] == 0:
        mapped = q
    return pearson(mapped, m)


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_ids: frozenset
    test_ids: frozenset
    fraction: float = TRAIN_FRACTION

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise AssertionError("content id on both sides of a split")

    def masks(self, content_ids):
        cids = list(content_ids)
        tr = np.array([c in self.train_ids for c in cids])
        te = np.array([c in self.test_ids for c in cids])
        assert not (tr & te).any() and (tr | te).all()
        return tr, te


def make_split(content_ids, seed: int, fraction: float = TRAIN_FRACTION) -> SplitPlan:
    """Random content-group split: ``fraction`` of the groups go to training."""
    uniq = sorted(set(content_ids), key=str)
    if len(uniq) < 2:
        raise TooFewSamples("need at least 2 content groups to split")
    n_test = min(max(1, int(round((1.0 - fraction) * len(uniq)))), len(uniq) - 1)
    order = np.random.default_rng(seed).permutation(len(uniq))
    test = frozenset(uniq[k] for k in order[:n_test])
    train = frozenset(uniq) - test
    return SplitPlan(seed, train, test, fraction)


def split_seed(base: int, index: int) -> int:
    return int(base) ^ int(index)


def _run_split(args):
    from .model import TrainConfig, predict, train

    index, X, y, cids, plan, train_kwargs = args
    out = {"index": index, "seed": plan.seed,
           "train_ids": sorted(plan.train_ids, key=str), "test_ids": sorted(plan.test_ids, key=str),
           "srocc": None, "lcc": None, "error": None}
    try:
        tr, te = plan.masks(cids)
        cfg = TrainConfig(seed=plan.seed, **train_kwargs)
        m = train(X[tr], y[tr], [c for c, k in zip(cids, tr) if k], cfg)
        p = predict(m, X[te])
        out["srocc"] = srocc(p, y[te])
        out["lcc"] = lcc(p, y[te])
        out["n_train"], out["n_test"] = int(tr.sum()), int(te.sum())
    except ChipQAError as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def run_protocol(features, mos, content_ids, n_splits: int = 1000, seed: int = 0,
                 fraction: float = TRAIN_FRACTION, train_kwargs: Optional[dict] = None,
                 jobs: int = 1) -> dict:
    """Repeated content-separated train/test evaluation.

    Returns a report with per-split values and their medians. A split that
    fails is recorded with its error and left out of the medians.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(mos, dtype=np.float64).ravel()
    cids = list(content_ids)
    if not (len(X) == len(y) == len(cids)):
        raise LengthMismatch(f"{len(X)} rows, {len(y)} scores, {len(cids)} content ids")
    train_kwargs = dict(train_kwargs or {})
    tasks = [(i, X, y, cids, make_split(cids, split_seed(seed, i), fraction), train_kwargs)
             for i in range(n_splits)]
    if jobs > 1 and n_splits > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            splits = list(ex.map(_run_split, tasks))
    else:
        splits = [_run_split(t) for t in tasks]
    ok = [s for s in splits if s["error"] is None]
    return {
        "seed": seed,
        "n_splits": n_splits,
        "fraction": fraction,
        "n_failed": len(splits) - len(ok),
        "median_srocc": float(np.median([s["srocc"] for s in ok])) if ok else None,
        "median_lcc": float(np.median([s["lcc"] for s in ok])) if ok else None,
        "splits": splits,
    }


def write_report(report: dict, json_path, csv_path=None) -> None:
    with atomic_open(json_path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        with atomic_open(csv_path, "w") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "seed", "srocc", "lcc", "error"])
            for s in report["splits"]:
                w.writerow([s["index"], s["seed"], s["srocc"], s["lcc"], s["error"] or ""])
            w.writerow(["median", report["seed"], report["median_srocc"], report["median_lcc"], ""])


def one_sided_t_test(a, b, alpha: float = 0.05) -> str:
    """Welch t-test decision of whether ``a`` is superior/inferior to ``b``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise TooFewSamples("need at least 2 values per side")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p_gt = stats.ttest_ind(a, b, equal_var=False, alternative="greater").pvalue
        p_lt = stats.ttest_ind(a, b, equal_var=False, alternative="less").pvalue
    if p_gt < alpha:
        return SUPERIOR
    if p_lt < alpha:
        return INFERIOR
    return INDISTINCT


_CODE = {SUPERIOR: 1, INFERIOR: -1, INDISTINCT: 0}


def decision_matrix(samples: dict, alpha: float = 0.05):
    """Pairwise decisions as a matrix of +1 / -1 / 0 (row vs column).

    Returns ``(names, matrix)``.
    """
    names = list(samples)
    n = len(names)
    M = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            if i != j:
                M[i, j] = _CODE[one_sided_t_test(samples[names[i]], samples[names[j]], alpha)]
    return names, M
