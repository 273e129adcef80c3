"""Synthetic place-types with planted co-location arrangements.

Each map is a Neyman-Scott style cluster process over a homogeneous background.
Every map carries the same number of planted groups per participating category,
whatever its class, so category abundances never reveal the label; only the
geometry does. Categories named in the class rule share one cluster centre per
event; every other participating category is dropped at its own independent
centre, which breaks the arrangement while keeping first-order intensity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .data import PlaceTypeDataset, PointMap, save_dataset


class RuleKind(str, Enum):
    PAIRWISE = "pairwise_colocation"
    THREEWAY = "threeway_colocation"
    ABSENT = "absent"


_MIN_CATEGORIES = {RuleKind.PAIRWISE: 2, RuleKind.THREEWAY: 3, RuleKind.ABSENT: 0}


@dataclass(frozen=True)
class ArrangementRule:
    kind: RuleKind
    participating_categories: tuple[str, ...] = ()
    radius: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RuleKind(self.kind))
        object.__setattr__(self, "participating_categories", tuple(self.participating_categories))
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        need = _MIN_CATEGORIES[self.kind]
        if len(self.participating_categories) < need:
            raise ValueError(f"{self.kind.value} needs at least {need} categories")
        if self.kind is RuleKind.ABSENT and self.participating_categories:
            raise ValueError("an absent rule names no categories")

    @property
    def colocated(self) -> tuple[str, ...]:
        return self.participating_categories


@dataclass(frozen=True)
class GenConfig:
    """Generator settings for one place-type.

    ``cluster_size`` points of every participating category are planted per
    cluster event; the rest of ``points_per_map`` is uniform background split
    evenly over the vocabulary.
    """

    vocabulary: tuple[str, ...]
    class_rules: dict[int, ArrangementRule]
    n_maps_per_class: int = 60
    points_per_map: int = 512
    n_clusters: int = 20
    cluster_size: int = 3
    cluster_spread: float = 0.015
    seed: int = 0
    place_type_id: str = "PT"

    def __post_init__(self) -> None:
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        rules = {int(k): v if isinstance(v, ArrangementRule) else ArrangementRule(**v) for k, v in self.class_rules.items()}
        object.__setattr__(self, "class_rules", rules)
        if self.points_per_map < 32:
            raise ValueError("points_per_map must be >= 32")
        if len(rules) < 2:
            raise ValueError("both classes need a rule")
        if self.n_maps_per_class < 1:
            raise ValueError("n_maps_per_class must be >= 1")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be positive")
        for rule in rules.values():
            missing = set(rule.participating_categories) - set(self.vocabulary)
            if missing:
                raise ValueError(f"rule categories {sorted(missing)} not in vocabulary")
        if self.n_background < 0:
            raise ValueError(
                f"infeasible config: {self.n_planted} planted points demanded "
                f"but points_per_map is {self.points_per_map}"
            )

    @property
    def participating(self) -> tuple[str, ...]:
        """Union of rule categories over classes, in vocabulary order."""
        used = {c for r in self.class_rules.values() for c in r.participating_categories}
        return tuple(c for c in self.vocabulary if c in used)

    @property
    def n_planted(self) -> int:
        return self.n_clusters * self.cluster_size * len(self.participating)

    @property
    def n_background(self) -> int:
        return self.points_per_map - self.n_planted

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocabulary"] = list(self.vocabulary)
        d["class_rules"] = {
            str(k): {"kind": r.kind.value, "participating_categories": list(r.participating_categories), "radius": r.radius}
            for k, r in self.class_rules.items()
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["class_rules"] = {int(k): ArrangementRule(**v) for k, v in d["class_rules"].items()}
        return cls(**d)


@dataclass
class PlantedMap:
    map: PointMap
    label: int
    # (n_clusters, n_participating, 2): centre used by each planted group
    group_centres: np.ndarray = field(repr=False)


def _offsets(rng: np.random.Generator, n: int, spread: float, radius: float) -> np.ndarray:
    """Isotropic Gaussian offsets truncated to the disc of the given radius."""
    out = rng.normal(0.0, spread, size=(n, 2))
    bad = np.hypot(out[:, 0], out[:, 1]) > radius
    while bad.any():
        out[bad] = rng.normal(0.0, spread, size=(int(bad.sum()), 2))
        bad = np.hypot(out[:, 0], out[:, 1]) > radius
    return out


def generate_map(cfg: GenConfig, label: int, index: int) -> PlantedMap:
    rng = np.random.default_rng([cfg.seed, label, index])
    rule = cfg.class_rules[label]
    code = {c: i for i, c in enumerate(cfg.vocabulary)}
    part = cfg.participating
    radius = max(r.radius for r in cfg.class_rules.values())
    lo, hi = radius, 1.0 - radius

    xy_chunks, cat_chunks = [], []
    centres = np.empty((cfg.n_clusters, len(part), 2))
    for e in range(cfg.n_clusters):
        shared = rng.uniform(lo, hi, size=2)
        for j, c in enumerate(part):
            centre = shared if c in rule.colocated else rng.uniform(lo, hi, size=2)
            centres[e, j] = centre
            xy_chunks.append(centre + _offsets(rng, cfg.cluster_size, cfg.cluster_spread, radius))
            cat_chunks.append(np.full(cfg.cluster_size, code[c]))

    nb = cfg.n_background
    V = len(cfg.vocabulary)
    bg_cats = np.resize(np.arange(V), nb)
    xy_chunks.append(rng.uniform(0.0, 1.0, size=(nb, 2)))
    cat_chunks.append(rng.permutation(bg_cats))

    xy = np.concatenate(xy_chunks)
    cats = np.concatenate(cat_chunks).astype(np.int64)
    order = rng.permutation(len(xy))
    pm = PointMap.from_raw(f"{cfg.place_type_id}-c{label}-{index:04d}", xy[order], cats[order])
    return PlantedMap(pm, label, centres)


def generate_place_type(cfg: GenConfig) -> PlaceTypeDataset:
    maps, labels = [], []
    for label in sorted(cfg.class_rules):
        for i in range(cfg.n_maps_per_class):
            maps.append(generate_map(cfg, label, i).map)
            labels.append(label)
    return PlaceTypeDataset(
        cfg.place_type_id,
        cfg.vocabulary,
        maps,
        np.array(labels, dtype=np.int64),
        meta={"generator": cfg.to_dict()},
    )


def generate_shifted_pair(cfg_source: GenConfig, cfg_target: GenConfig) -> tuple[PlaceTypeDataset, PlaceTypeDataset]:
    """Source and target place-types sharing vocabulary and label space."""
    if cfg_source.vocabulary != cfg_target.vocabulary:
        raise ValueError("source and target vocabularies differ")
    if set(cfg_source.class_rules) != set(cfg_target.class_rules):
        raise ValueError("source and target label spaces differ")
    return generate_place_type(cfg_source), generate_place_type(cfg_target)


def write_generated(ds: PlaceTypeDataset, cfg: GenConfig, directory: str | Path) -> Path:
    """Save ``ds`` plus a ``generator.json`` echo of its config."""
    directory = Path(directory)
    manifest = save_dataset(ds, directory)
    (directory / "generator.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n", encoding="utf-8")
    return manifest
