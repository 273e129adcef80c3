"""Multi-type point maps, place-type datasets, manifest I/O and FPS preprocessing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


class Point(NamedTuple):
    x: float
    y: float
    category: str


def minmax_normalize(raw: FloatArray) -> FloatArray:
    """Per-axis min-max scaling into [0, 1]^2; a zero-extent axis maps to 0."""
    lo = raw.min(axis=0)
    span = raw.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return (raw - lo) / span


@dataclass(frozen=True, eq=False)
class PointMap:
    """An unordered multiset of typed 2-D points.

    ``xy`` holds the coordinates every model operation works on. Maps built with
    :meth:`from_raw` keep the untouched input in ``raw_xy`` and a per-map
    min-max normalised copy in ``xy``; synthetic intermediates (mix-up output)
    carry ``xy`` only and ``raw_xy`` aliases it.
    """

    map_id: str
    xy: FloatArray
    categories: IntArray
    raw_xy: FloatArray | None = None
    undersized: bool = False

    def __post_init__(self) -> None:
        xy = np.asarray(self.xy, dtype=np.float64)
        cats = np.asarray(self.categories, dtype=np.int64)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError(f"map {self.map_id}: xy must have shape (n, 2), got {xy.shape}")
        if xy.shape[0] < 1:
            raise ValueError(f"map {self.map_id}: a point map needs at least one point")
        if cats.shape != (xy.shape[0],):
            raise ValueError(f"map {self.map_id}: one category per point required")
        if not np.all(np.isfinite(xy)):
            raise ValueError(f"map {self.map_id}: coordinates must be finite")
        raw = xy if self.raw_xy is None else np.asarray(self.raw_xy, dtype=np.float64)
        if raw.shape != xy.shape:
            raise ValueError(f"map {self.map_id}: raw_xy shape mismatch")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "raw_xy", raw)

    @classmethod
    def from_raw(cls, map_id: str, raw_xy, categories, undersized: bool = False) -> "PointMap":
        raw = np.asarray(raw_xy, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] < 1:
            raise ValueError(f"map {map_id}: a point map needs at least one point")
        if not np.all(np.isfinite(raw)):
            raise ValueError(f"map {map_id}: coordinates must be finite")
        return cls(map_id, minmax_normalize(raw), categories, raw_xy=raw, undersized=undersized)

    def __len__(self) -> int:
        return self.xy.shape[0]

    def points(self, vocabulary: Sequence[str]) -> list[Point]:
        return [Point(float(x), float(y), vocabulary[c]) for (x, y), c in zip(self.xy, self.categories)]

    def take(self, idx, map_id: str | None = None, undersized: bool = False) -> "PointMap":
        """Sub-map from row indices, renormalised on its own extent."""
        idx = np.asarray(idx, dtype=np.int64)
        return PointMap.from_raw(map_id or self.map_id, self.raw_xy[idx], self.categories[idx], undersized)

    def same_points(self, other: "PointMap") -> bool:
        return (
            np.array_equal(self.xy, other.xy)
            and np.array_equal(self.raw_xy, other.raw_xy)
            and np.array_equal(self.categories, other.categories)
        )


@dataclass(frozen=True, eq=False)
class PlaceTypeDataset:
    place_type_id: str
    vocabulary: tuple[str, ...]
    maps: tuple[PointMap, ...]
    labels: IntArray | None = None
    closed_vocabulary: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "maps", tuple(self.maps))
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary entries must be unique")
        V = len(self.vocabulary)
        for m in self.maps:
            if m.categories.min() < 0 or m.categories.max() >= V:
                raise ValueError(f"map {m.map_id}: category code outside vocabulary")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(self.maps),):
                raise ValueError("exactly one label per map required")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def strip_labels(self) -> "PlaceTypeDataset":
        return replace(self, labels=None)

    def subset(self, idx: Sequence[int]) -> "PlaceTypeDataset":
        idx = list(idx)
        labels = None if self.labels is None else self.labels[idx]
        return replace(self, maps=tuple(self.maps[i] for i in idx), labels=labels)

    def map_ids(self) -> list[str]:
        return [m.map_id for m in self.maps]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_fraction", "validation_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


# -- manifest I/O -----------------------------------------------------------


class ManifestError(ValueError):
    pass


def load_dataset(manifest_path: str | Path) -> PlaceTypeDataset:
    """Read a manifest JSON plus its per-map ``x,y,category`` CSV files.

    Labels are attached only when every map entry carries one. A manifest
    without a ``vocabulary`` key infers it (sorted) from the data; with one,
    unknown categories are an error.
    """
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    entries = doc.get("maps") or []
    if not entries:
        raise ManifestError(f"{path}: no maps")
    place_type_id = doc.get("place_type_id")
    if not place_type_id:
        raise ManifestError(f"{path}: missing place_type_id")

    rows: list[tuple[str, FloatArray, list[str]]] = []
    for entry in entries:
        if "map_id" not in entry or "file" not in entry:
            raise ManifestError(f"{path}: map entry needs map_id and file: {entry}")
        xy, cats = _read_map_csv(path.parent / entry["file"])
        rows.append((str(entry["map_id"]), xy, cats))

    closed = "vocabulary" in doc
    if closed:
        vocabulary = [str(v) for v in doc["vocabulary"]]
        known = set(vocabulary)
        for map_id, _, cats in rows:
            unknown = sorted(set(cats) - known)
            if unknown:
                raise ManifestError(f"map {map_id}: unknown categories {unknown}")
    else:
        vocabulary = sorted({c for _, _, cats in rows for c in cats})
    code = {c: i for i, c in enumerate(vocabulary)}

    has_label = ["label" in e and e["label"] is not None for e in entries]
    if any(has_label) and not all(has_label):
        raise ManifestError(f"{path}: labels must be given for all maps or none")
    labels = np.array([int(e["label"]) for e in entries], dtype=np.int64) if all(has_label) else None

    maps = [
        PointMap.from_raw(map_id, xy, np.array([code[c] for c in cats], dtype=np.int64), bool(e.get("undersized", False)))
        for (map_id, xy, cats), e in zip(rows, entries)
    ]
    return PlaceTypeDataset(place_type_id, vocabulary, maps, labels, closed, dict(doc.get("meta", {})))


def _read_map_csv(path: Path) -> tuple[FloatArray, list[str]]:
    if not path.is_file():
        raise FileNotFoundError(f"map file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y", "category"]:
            raise ManifestError(f"{path}: header must be x,y,category")
        xy, cats = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: malformed row {row!r}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ManifestError(f"{path}:{lineno}: non-finite coordinate")
            xy.append((x, y))
            cats.append(row[2].strip())
    if not xy:
        raise ManifestError(f"{path}: map has no points")
    return np.array(xy, dtype=np.float64), cats


def save_dataset(ds: PlaceTypeDataset, directory: str | Path, manifest_name: str = "manifest.json") -> Path:
    """Write ``ds`` as manifest + CSV files; coordinates round-trip bit-exactly."""
    directory = Path(directory)
    (directory / "maps").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, m in enumerate(ds.maps):
        rel = f"maps/{i:05d}.csv"
        with (directory / rel).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "category"])
            for (x, y), c in zip(m.raw_xy.tolist(), m.categories.tolist()):
                w.writerow([repr(x), repr(y), ds.vocabulary[c]])
        entry: dict = {"map_id": m.map_id, "file": rel}
        if ds.labels is not None:
            entry["label"] = int(ds.labels[i])
        if m.undersized:
            entry["undersized"] = True
        entries.append(entry)
    doc = {"place_type_id": ds.place_type_id, "vocabulary": list(ds.vocabulary), "maps": entries}
    if ds.meta:
        doc["meta"] = ds.meta
    out = directory / manifest_name
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return out


# -- splitting --------------------------------------------------------------


def _stratified_order(labels: IntArray | None, n: int, rng: np.random.Generator) -> list[int]:
    """Shuffle, then interleave classes so every prefix is near-proportional."""
    if labels is None:
        return rng.permutation(n).tolist()
    keys = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        for rank, i in enumerate(members):
            keys.append(((rank + 0.5) / len(members), int(c), int(i)))
    keys.sort()
    return [i for _, _, i in keys]


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_trainval = math.floor(n * spec.train_fraction + 1e-9)
    n_val = math.floor(n_trainval * spec.validation_fraction_of_train + 1e-9)
    return n_trainval - n_val, n_val, n - n_trainval


def split_dataset(ds: PlaceTypeDataset, spec: SplitSpec) -> tuple[PlaceTypeDataset, PlaceTypeDataset, PlaceTypeDataset]:
    """Deterministic (train, validation, test) split, stratified when labelled."""
    n = len(ds)
    if n < 5:
        raise ValueError(f"need at least 5 maps to split, got {n}")
    n_train, n_val, n_test = split_sizes(n, spec)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} maps cannot form nonempty splits with {spec}")
    order = _stratified_order(ds.labels, n, np.random.default_rng(spec.seed))
    test = sorted(order[:n_test])
    val = sorted(order[n_test : n_test + n_val])
    train = sorted(order[n_test + n_val :])
    return ds.subset(train), ds.subset(val), ds.subset(test)


# -- farthest point sampling ------------------------------------------------


def fps_indices(xy: FloatArray, k: int) -> IntArray:
    """Greedy farthest-point order starting at index 0; ties go to the lowest index."""
    n = xy.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    out = np.empty(k, dtype=np.int64)
    out[0] = 0
    d = ((xy - xy[0]) ** 2).sum(axis=1)
    # chosen points are pinned below every real distance so duplicates never repeat an index
    d[0] = -1.0
    for j in range(1, k):
        nxt = int(np.argmax(d))
        out[j] = nxt
        d = np.minimum(d, ((xy - xy[nxt]) ** 2).sum(axis=1))
        d[out[: j + 1]] = -1.0
    return out


def farthest_point_sample(pm: PointMap, k: int) -> PointMap:
    return pm.take(fps_indices(pm.xy, k))


def subset_expand(ds: PlaceTypeDataset, k: int, keep_remainder: bool = False) -> PlaceTypeDataset:
    """Cover every map with disjoint k-point FPS subsets.

    Subsets are peeled off one at a time (FPS on what is left). Maps smaller than
    ``k`` are emitted whole and flagged undersized; a leftover tail under ``k``
    is dropped unless ``keep_remainder``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    maps, labels = [], []
    for i, m in enumerate(ds.maps):
        label = None if ds.labels is None else int(ds.labels[i])
        pieces = []
        if len(m) < k:
            pieces.append(m.take(np.arange(len(m)), f"{m.map_id}#0", undersized=True))
        else:
            remaining = np.arange(len(m))
            while len(remaining) >= k:
                sel = fps_indices(m.xy[remaining], k)
                pieces.append(m.take(remaining[sel], f"{m.map_id}#{len(pieces)}"))
                remaining = np.delete(remaining, sel)
            if keep_remainder and len(remaining):
                pieces.append(m.take(remaining, f"{m.map_id}#{len(pieces)}", undersized=True))
        maps.extend(pieces)
        labels.extend([label] * len(pieces))
    out_labels = None if ds.labels is None else np.array(labels, dtype=np.int64)
    return replace(ds, maps=tuple(maps), labels=out_labels)
