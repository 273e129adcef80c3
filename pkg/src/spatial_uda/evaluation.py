"""Support-weighted metrics, adaptation tables, co-location features and permutation importance."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .data import PlaceTypeDataset, PointMap, split_dataset

METRICS = ("accuracy", "precision", "recall", "f1")
TABLE_ROWS = ("supervised", "no_adaptation", "full", "smum_only", "scpc_only")


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[tuple[int, ...], ...]

    @classmethod
    def from_confusion(cls, confusion) -> "MetricReport":
        C = np.asarray(confusion, dtype=np.int64)
        total = C.sum()
        if total < 1:
            raise ValueError("empty confusion matrix")
        tp = np.diag(C).astype(np.float64)
        support = C.sum(axis=1).astype(np.float64)
        predicted = C.sum(axis=0).astype(np.float64)
        prec = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
        rec = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
        denom = prec + rec
        f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(tp), where=denom > 0)
        w = support / total
        return cls(
            accuracy=float(tp.sum() / total),
            precision=float(w @ prec),
            recall=float(w @ rec),
            f1=float(w @ f1),
            confusion=tuple(tuple(int(v) for v in row) for row in C),
        )

    def to_dict(self) -> dict:
        return {**{m: getattr(self, m) for m in METRICS}, "confusion": [list(r) for r in self.confusion]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(*(float(d[m]) for m in METRICS), tuple(tuple(r) for r in d["confusion"]))


def confusion_matrix(predictions, truths, n_classes: int = 2) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if p.shape != t.shape or p.size < 1:
        raise ValueError("predictions and truths must have equal nonzero length")
    for arr in (p, t):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"label outside the shared space 0..{n_classes - 1}")
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (t, p), 1)
    return C


def weighted_metrics(predictions, truths, n_classes: int = 2) -> MetricReport:
    return MetricReport.from_confusion(confusion_matrix(predictions, truths, n_classes))


# -- comparison table ---------------------------------------------------------


def adaptation_table(reports: Mapping[str, MetricReport], allow_missing: bool = False) -> dict:
    """Rows of metrics plus gain over ``no_adaptation``; missing rows raise unless allowed."""
    missing = [r for r in TABLE_ROWS if r not in reports]
    if missing and not allow_missing:
        raise KeyError(f"missing required rows: {missing}")
    base = reports.get("no_adaptation")
    rows = []
    for name in TABLE_ROWS:
        rep = reports.get(name)
        if rep is None:
            rows.append({"method": name, "missing": True})
            continue
        rows.append(
            {
                "method": name,
                "metrics": {m: getattr(rep, m) for m in METRICS},
                "gain": {m: None if base is None else getattr(rep, m) - getattr(base, m) for m in METRICS},
            }
        )
    return {"rows": rows, "missing": missing}


def format_table(table: dict) -> str:
    head = f"{'method':<14}" + "".join(f"{m:>10}{'gain':>8}" for m in METRICS)
    lines = [head, "-" * len(head)]
    for row in table["rows"]:
        if row.get("missing"):
            lines.append(f"{row['method']:<14}" + "".join(f"{'--':>10}{'--':>8}" for _ in METRICS))
            continue
        cells = "".join(
            f"{row['metrics'][m]:>10.3f}" + (f"{'--':>8}" if row["gain"][m] is None else f"{row['gain'][m]:>+8.3f}")
            for m in METRICS
        )
        lines.append(f"{row['method']:<14}{cells}")
    return "\n".join(lines)


# -- co-location features -------------------------------------------------------


@dataclass(frozen=True)
class ColocationFeatureVector:
    """Participation value per category subset.

    Subsets are all combinations of category codes of size 2..max_subset, in
    ``itertools.combinations`` order, size 2 first.
    """

    subsets: tuple[tuple[int, ...], ...]
    values: np.ndarray

    def names(self, vocabulary: Sequence[str]) -> list[str]:
        return ["<" + ",".join(vocabulary[c] for c in s) + ">" for s in self.subsets]


def category_subsets(n_categories: int, max_subset: int) -> tuple[tuple[int, ...], ...]:
    return tuple(s for size in range(2, max_subset + 1) for s in combinations(range(n_categories), size))


def colocation_features(pm: PointMap, radius: float, max_subset: int, n_categories: int) -> ColocationFeatureVector:
    """Participation values of every category subset on one map.

    For subset S, the participation of category c in S is the fraction of
    c-points that have a point of every other S-category within ``radius``
    (inclusive); the subset's value is the minimum of that over S. A subset
    with an absent category scores 0.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_subset not in (2, 3):
        raise ValueError("max_subset must be 2 or 3")
    if len(pm) == 0:
        raise ValueError("empty map")
    cats = pm.categories
    near = np.zeros((len(pm), n_categories), dtype=bool)
    pairs = cKDTree(pm.xy).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        near[i, cats[j]] = True
        near[j, cats[i]] = True
    members = [cats == c for c in range(n_categories)]
    subsets = category_subsets(n_categories, max_subset)
    values = np.empty(len(subsets))
    for f, S in enumerate(subsets):
        value = 1.0
        for c in S:
            if not members[c].any():
                value = 0.0
                break
            others = [o for o in S if o != c]
            value = min(value, float(near[members[c]][:, others].all(axis=1).mean()))
        values[f] = value
    return ColocationFeatureVector(subsets, values)


def colocation_matrix(ds: PlaceTypeDataset, radius: float = 0.05, max_subset: int = 3) -> tuple[np.ndarray, list[str]]:
    V = len(ds.vocabulary)
    vecs = [colocation_features(m, radius, max_subset, V) for m in ds.maps]
    return np.stack([v.values for v in vecs]), vecs[0].names(ds.vocabulary)


# -- permutation importance ------------------------------------------------------


@dataclass
class ImportanceReport:
    names: list[str]
    importances: np.ndarray
    std: np.ndarray
    baseline: float
    metric: str = "f1"

    @property
    def ranking(self) -> list[int]:
        """Feature indices by descending importance; ties keep the lower index first."""
        return sorted(range(len(self.importances)), key=lambda i: (-self.importances[i], i))

    def top(self, k: int = 5) -> list[tuple[str, float]]:
        return [(self.names[i], float(self.importances[i])) for i in self.ranking[:k]]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "baseline": self.baseline,
            "features": [
                {"rank": r + 1, "name": self.names[i], "importance": float(self.importances[i]), "std": float(self.std[i])}
                for r, i in enumerate(self.ranking)
            ],
        }

    def save(self, path: str | Path, plot: bool = False) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        if plot:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            order = self.ranking
            fig, ax = plt.subplots(figsize=(6, 0.3 * len(order) + 1))
            ax.barh([self.names[i] for i in order][::-1], self.importances[order][::-1], xerr=self.std[order][::-1])
            ax.set_xlabel(f"drop in weighted {self.metric}")
            fig.tight_layout()
            fig.savefig(path.with_suffix(".png"))
            plt.close(fig)
        return path


def permutation_importance(
    model,
    features,
    labels,
    n_repeats: int = 20,
    seed: int = 0,
    names: Sequence[str] | None = None,
    metric: str = "f1",
    n_classes: int = 2,
) -> ImportanceReport:
    """Mean drop in a weighted metric when one feature column is shuffled."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    expected = getattr(model, "n_features_in_", X.shape[1])
    if X.ndim != 2 or X.shape[1] != expected:
        raise ValueError(f"model expects {expected} features, got {X.shape[1] if X.ndim == 2 else X.shape}")
    names = list(names) if names is not None else [f"f{i}" for i in range(X.shape[1])]

    def score(Xs):
        return getattr(weighted_metrics(model.predict(Xs), y, n_classes), metric)

    baseline = score(X)
    rng = np.random.default_rng(seed)
    drops = np.zeros((X.shape[1], n_repeats))
    for f in range(X.shape[1]):
        for r in range(n_repeats):
            Xp = X.copy()
            Xp[:, f] = X[rng.permutation(len(X)), f]
            drops[f, r] = baseline - score(Xp)
    return ImportanceReport(names, drops.mean(axis=1), drops.std(axis=1), baseline, metric)


def fit_surrogate(features, labels, seed: int = 0, max_depth: int | None = 3):
    """Decision-tree surrogate over hand-built co-location features."""
    from sklearn.tree import DecisionTreeClassifier

    return DecisionTreeClassifier(max_depth=max_depth, random_state=seed).fit(features, labels)


def interpret_place_type(
    ds: PlaceTypeDataset,
    split,
    radius: float = 0.05,
    max_subset: int = 3,
    n_repeats: int = 20,
    max_depth: int | None = 3,
) -> ImportanceReport:
    """Surrogate-tree importance of co-location features on a labelled place-type.

    The tree is fit on the train part of ``split`` and scored on its test part.
    """
    train_ds, _, test_ds = split_dataset(ds, split)
    X_tr, names = colocation_matrix(train_ds, radius, max_subset)
    X_te, _ = colocation_matrix(test_ds, radius, max_subset)
    tree = fit_surrogate(X_tr, train_ds.labels, seed=split.seed, max_depth=max_depth)
    return permutation_importance(tree, X_te, test_ds.labels, n_repeats=n_repeats, seed=split.seed, names=names)
