"""Spatial mix-up and mask mixing of source/target point maps, plus their pseudo-label losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction

import numpy as np
import torch

from .data import PointMap

EPS = 1e-7
MAX_GEOMETRY_RETRIES = 32


class Origin(IntEnum):
    """Sample provenance; doubles as the 3-way mask-mix class index."""

    SOURCE = 0
    TARGET = 1
    MIX = 2


@dataclass(frozen=True)
class MixConfig:
    alpha: float = 1.0
    geometry_set: tuple[str, ...] = ("square", "rectangle", "disk")
    mask_ratio_range: tuple[float, float] = (0.1, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "geometry_set", tuple(self.geometry_set))
        object.__setattr__(self, "mask_ratio_range", tuple(self.mask_ratio_range))
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        lo, hi = self.mask_ratio_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("mask_ratio_range must lie inside (0, 1)")
        unknown = set(self.geometry_set) - set(Region.KINDS)
        if unknown or not self.geometry_set:
            raise ValueError(f"unknown geometries {sorted(unknown)}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class Region:
    """Axis-aligned square/rectangle (half extents) or disk (radius in half_w)."""

    kind: str
    center: tuple[float, float]
    half_w: float
    half_h: float

    KINDS = ("square", "rectangle", "disk")

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.half_w**2
        return 4.0 * self.half_w * self.half_h

    def contains(self, xy: np.ndarray) -> np.ndarray:
        dx = xy[:, 0] - self.center[0]
        dy = xy[:, 1] - self.center[1]
        if self.kind == "disk":
            return dx * dx + dy * dy <= self.half_w**2
        return (np.abs(dx) <= self.half_w) & (np.abs(dy) <= self.half_h)

    @classmethod
    def sample(cls, rng: np.random.Generator, cfg: MixConfig) -> "Region":
        kind = cfg.geometry_set[rng.integers(len(cfg.geometry_set))]
        area = rng.uniform(*cfg.mask_ratio_range)
        center = (float(rng.uniform()), float(rng.uniform()))
        if kind == "square":
            h = math.sqrt(area) / 2
            return cls(kind, center, h, h)
        if kind == "rectangle":
            aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
            return cls(kind, center, math.sqrt(area * aspect) / 2, math.sqrt(area / aspect) / 2)
        return cls(kind, center, math.sqrt(area / math.pi), math.sqrt(area / math.pi))


@dataclass(frozen=True, eq=False)
class MixedSample:
    map: PointMap
    lam: float
    origin: Origin = Origin.MIX


@dataclass(frozen=True, eq=False)
class MaskMixedSample:
    map: PointMap
    per_point_origin: np.ndarray  # True where the point came from the source map
    geometry: Region

    @property
    def retained_source(self) -> int:
        return int(self.per_point_origin.sum())

    @property
    def total(self) -> int:
        return len(self.per_point_origin)

    @property
    def source_ratio(self) -> Fraction:
        return Fraction(self.retained_source, self.total)

    @property
    def target_ratio(self) -> Fraction:
        return 1 - self.source_ratio

    def ratios(self) -> tuple[float, float]:
        """Float (alpha, beta); beta = 1 - alpha so the pair sums to exactly 1.0."""
        a = float(self.source_ratio)
        return a, 1.0 - a


def _check_pair(src: PointMap, tgt: PointMap) -> None:
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("cannot mix empty maps")


def spatial_mixup(
    src: PointMap,
    tgt: PointMap,
    cfg: MixConfig,
    rng: np.random.Generator | None = None,
    lam: float | None = None,
    shuffle_pairs: bool = True,
) -> MixedSample:
    """Convex mix of index-paired points with one Beta(alpha, alpha) draw per sample.

    The target side is randomly permuted before pairing when ``shuffle_pairs``.
    Each mixed point keeps the source category with probability ``lam``.
    """
    _check_pair(src, tgt)
    if len(src) != len(tgt):
        raise ValueError(f"size mismatch: {len(src)} source vs {len(tgt)} target points")
    rng = cfg.rng() if rng is None else rng
    if lam is None:
        lam = float(rng.beta(cfg.alpha, cfg.alpha))
    perm = rng.permutation(len(tgt)) if shuffle_pairs else np.arange(len(tgt))
    t_xy, t_cat = tgt.xy[perm], tgt.categories[perm]
    xy = lam * src.xy + (1.0 - lam) * t_xy
    u = rng.uniform(size=len(src))
    cats = np.where(u < lam, src.categories, t_cat)
    pm = PointMap(f"mix({src.map_id},{tgt.map_id})", xy, cats)
    return MixedSample(pm, lam)


def mask_mix_with(src: PointMap, tgt: PointMap, region: Region) -> MaskMixedSample:
    """Replace the source points inside ``region`` by the target points inside it."""
    _check_pair(src, tgt)
    if not region.area > 0:
        raise ValueError("degenerate mask geometry (zero area)")
    keep = ~region.contains(src.xy)
    take = region.contains(tgt.xy)
    n_keep, n_take = int(keep.sum()), int(take.sum())
    if n_keep + n_take == 0:
        raise ValueError("mask removes every source point and inserts none")
    xy = np.concatenate([src.xy[keep], tgt.xy[take]])
    cats = np.concatenate([src.categories[keep], tgt.categories[take]])
    origin = np.concatenate([np.ones(n_keep, bool), np.zeros(n_take, bool)])
    pm = PointMap(f"maskmix({src.map_id},{tgt.map_id})", xy, cats)
    return MaskMixedSample(pm, origin, region)


def spatial_mask_mix(
    src: PointMap,
    tgt: PointMap,
    cfg: MixConfig,
    rng: np.random.Generator | None = None,
) -> MaskMixedSample:
    rng = cfg.rng() if rng is None else rng
    for _ in range(MAX_GEOMETRY_RETRIES):
        region = Region.sample(rng, cfg)
        if region.area <= 0 or region.half_w <= 0 or region.half_h <= 0:
            continue
        try:
            return mask_mix_with(src, tgt, region)
        except ValueError:
            continue
    raise RuntimeError(f"no usable mask geometry after {MAX_GEOMETRY_RETRIES} draws")


# -- pseudo-label losses ----------------------------------------------------


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=EPS))


def loss_cls_mix(probs, origins) -> torch.Tensor:
    """Real-vs-mixed binary cross-entropy; ``probs`` is P(real) per sample."""
    p = _as_tensor(probs).reshape(-1)
    origins = np.asarray(origins, dtype=np.int64).reshape(-1)
    if origins.size == 0:
        raise ValueError("empty batch")
    if p.shape[0] != origins.size:
        raise ValueError("one origin per probability required")
    real = torch.as_tensor(origins != Origin.MIX, dtype=torch.bool)
    terms = torch.where(real, _log(p), _log(1.0 - p))
    return -terms.mean()


def loss_cls_maskmix(class_probs, labels) -> torch.Tensor:
    """Mean 3-way cross-entropy over {source=0, target=1, mask-mixed=2}."""
    P = _as_tensor(class_probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ValueError("empty batch")
    if P.ndim != 2 or P.shape != (labels.size, 3):
        raise ValueError(f"expected ({labels.size}, 3) probabilities, got {tuple(P.shape)}")
    if labels.min() < 0 or labels.max() > 2:
        raise ValueError("labels must be in {0, 1, 2}")
    sums = P.detach().sum(dim=1)
    if torch.any(torch.abs(sums - 1) > 1e-6):
        raise ValueError("each probability row must sum to 1")
    picked = P[torch.arange(labels.size), torch.as_tensor(labels)]
    return -_log(picked).mean()


def loss_cls_softmix(probs, ratios) -> torch.Tensor:
    """Soft-label cross-entropy against (preserved-source, target) proportions."""
    P = _as_tensor(probs)
    R = _as_tensor(ratios).to(P.dtype)
    if P.ndim != 2 or P.shape[1] != 2 or R.shape != P.shape:
        raise ValueError("probs and ratios must both be (N, 2)")
    if P.shape[0] == 0:
        raise ValueError("empty batch")
    if torch.any(R < 0) or torch.any(R > 1):
        raise ValueError("ratios must lie in [0, 1]")
    if torch.any(torch.abs(R.sum(dim=1) - 1) > 1e-12):
        raise ValueError("alpha + beta must equal 1")
    return -(R * _log(P)).sum(dim=1).mean()
