"""Joint optimisation of the supervised source loss and the self-supervised adaptation losses."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

from .data import PlaceTypeDataset, PointMap, SplitSpec, farthest_point_sample, split_dataset
from .encoder import EncoderConfig, SpatialDAModel, encode_maps, predict
from .evaluation import MetricReport, weighted_metrics
from .mixmask import (
    MixConfig,
    Origin,
    loss_cls_maskmix,
    loss_cls_mix,
    loss_cls_softmix,
    spatial_mask_mix,
    spatial_mixup,
)
from .scpc import LatentBatch, build_pairing_plan, scpc_loss

log = logging.getLogger(__name__)

TERMS = ("supervised", "cls_mix", "cls_maskMix", "cls_softMix", "scpc")
SMUM_TERMS = ("cls_mix", "cls_maskMix", "cls_softMix")
MODES = ("full", "smum_only", "scpc_only", "no_adaptation")


class UnsupervisedContractError(ValueError):
    """Target data handed to adaptation training still carries labels."""


@dataclass(frozen=True)
class TrainConfig:
    loss_weights: dict = field(default_factory=lambda: {t: 1.0 for t in TERMS})
    mode: str = "full"
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    patience: int = 20
    seed: int = 0
    temperature: float = 0.1
    context_window: int = 4
    max_negatives: int | None = None
    deterministic: bool = True
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        unknown = set(self.loss_weights) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        weights = {t: float(self.loss_weights.get(t, 1.0)) for t in TERMS}
        if any(w < 0 for w in weights.values()):
            raise ValueError("loss weights must be >= 0")
        object.__setattr__(self, "loss_weights", weights)
        if isinstance(self.split, dict):
            object.__setattr__(self, "split", SplitSpec(**self.split))
        if not any(w > 0 for w in self.effective_weights().values()):
            raise ValueError("at least one effective loss weight must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def effective_weights(self) -> dict[str, float]:
        w = dict(self.loss_weights)
        if self.mode == "no_adaptation":
            w.update({t: 0.0 for t in TERMS if t != "supervised"})
        elif self.mode == "smum_only":
            w["scpc"] = 0.0
        elif self.mode == "scpc_only":
            w.update({t: 0.0 for t in SMUM_TERMS})
        return w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effective_weights"] = self.effective_weights()
        return d


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[dict]
    best_epoch: int
    validation: dict
    test: dict
    splits: dict
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock_s")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    def loss_csv(self) -> str:
        cols = ["epoch", *TERMS, "total", "val_f1"]
        lines = [",".join(cols)]
        for e in self.epochs:
            row = [e["epoch"], *(e["losses"][t] for t in TERMS), e["losses"]["total"], e["validation"]["f1"]]
            lines.append(",".join(repr(v) for v in row))
        return "\n".join(lines) + "\n"


def nll(probs: torch.Tensor, labels) -> torch.Tensor:
    idx = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    return -torch.log(torch.clamp(probs[torch.arange(len(idx)), idx], min=1e-7)).mean()


def compute_terms(
    model: SpatialDAModel,
    src: Sequence[PointMap],
    src_labels,
    tgt: Sequence[PointMap],
    weights: dict[str, float],
    mix_cfg: MixConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict[str, torch.Tensor]:
    """Every positively weighted loss term for one batch; zero-weight terms are skipped."""
    zero = torch.zeros((), dtype=model.dtype)
    terms = {t: zero for t in TERMS}
    smum = any(weights[t] > 0 for t in SMUM_TERMS)
    adapt = smum or weights["scpc"] > 0
    B = len(src)

    maps = list(src) + (list(tgt) if adapt else [])
    mixed, masked = [], []
    if smum:
        for s, t in zip(src, tgt):
            if len(s) != len(t):
                k = min(len(s), len(t))
                s, t = farthest_point_sample(s, k), farthest_point_sample(t, k)
            mixed.append(spatial_mixup(s, t, mix_cfg, rng).map)
        masked = [spatial_mask_mix(s, t, mix_cfg, rng) for s, t in zip(src, tgt)]
        maps += mixed + [m.map for m in masked]
    z = encode_maps(maps, model)
    z_src, z_tgt = z[:B], z[B : 2 * B]

    if weights["supervised"] > 0:
        terms["supervised"] = nll(model.head_probs(z_src, "supervised"), src_labels)
    if smum:
        z_mix, z_mask = z[2 * B : 3 * B], z[3 * B :]
        real_mask = torch.cat([z_src, z_tgt, z_mask])
        if weights["cls_mix"] > 0:
            origins = [Origin.SOURCE] * B + [Origin.TARGET] * B + [Origin.MIX] * B
            terms["cls_mix"] = loss_cls_mix(model.head_probs(torch.cat([z_src, z_tgt, z_mix]), "cls_mix"), origins)
        if weights["cls_maskMix"] > 0:
            labels = [Origin.SOURCE] * B + [Origin.TARGET] * B + [Origin.MIX] * B
            terms["cls_maskMix"] = loss_cls_maskmix(model.head_probs(real_mask, "cls_maskMix"), labels)
        if weights["cls_softMix"] > 0:
            ratios = [(1.0, 0.0)] * B + [(0.0, 1.0)] * B + [m.ratios() for m in masked]
            terms["cls_softMix"] = loss_cls_softmix(model.head_probs(real_mask, "cls_softMix"), ratios)
    if weights["scpc"] > 0:
        latents = torch.cat([z_src, z_tgt])
        place_ids = np.array(["source"] * B + ["target"] * B)
        plan = build_pairing_plan(place_ids, rng, cfg.context_window, cfg.max_negatives)
        ctx, pred = model.context(latents, plan)
        terms["scpc"] = scpc_loss(LatentBatch(latents, place_ids, pred, cfg.temperature, ctx), plan)
    return terms


def total_loss(terms: dict[str, torch.Tensor], weights: dict[str, float]) -> torch.Tensor:
    total = terms["supervised"] * weights["supervised"]
    for t in TERMS[1:]:
        total = total + terms[t] * weights[t]
    return total


def evaluate_model(model: SpatialDAModel, ds: PlaceTypeDataset) -> MetricReport:
    if not ds.is_labeled:
        raise ValueError(f"{ds.place_type_id}: evaluation needs labels")
    return weighted_metrics(predict(ds.maps, model), ds.labels, model.cfg.n_classes)


def _setup(cfg: TrainConfig, enc_cfg: EncoderConfig, dtype: torch.dtype) -> SpatialDAModel:
    if cfg.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    return SpatialDAModel(enc_cfg).to(dtype)


def _fit(
    source: PlaceTypeDataset,
    target: PlaceTypeDataset | None,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig,
    mix_cfg: MixConfig,
    weights: dict[str, float],
    dtype: torch.dtype,
    model: SpatialDAModel | None,
) -> tuple[SpatialDAModel, RunReport]:
    started = time.perf_counter()
    if not source.is_labeled:
        raise ValueError("source place-type must be labelled")
    train_ds, val_ds, test_ds = split_dataset(source, cfg.split)
    model = _setup(cfg, enc_cfg, dtype) if model is None else model
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)

    n_src = len(train_ds)
    B = min(cfg.batch_size, n_src)
    best_f1, best_epoch, best_state, stale = -1.0, -1, None, 0
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        model.train()
        order = rng.permutation(n_src)
        sums = {t: 0.0 for t in (*TERMS, "total")}
        n_batches = 0
        for s in range(0, n_src - B + 1, B):
            idx = order[s : s + B]
            src = [train_ds.maps[i] for i in idx]
            tgt = []
            if target is not None:
                tgt = [target.maps[i] for i in rng.choice(len(target), size=B, replace=len(target) < B)]
            terms = compute_terms(model, src, train_ds.labels[idx], tgt, weights, mix_cfg, cfg, rng)
            loss = total_loss(terms, weights)
            if not torch.isfinite(loss):
                detail = {t: float(v.detach()) for t, v in terms.items()}
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {n_batches}: {detail}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for t, v in terms.items():
                sums[t] += float(v.detach())
            sums["total"] += float(loss.detach())
            n_batches += 1
        sched.step()
        val = evaluate_model(model, val_ds)
        history.append(
            {
                "epoch": epoch,
                "losses": {t: v / max(n_batches, 1) for t, v in sums.items()},
                "validation": val.to_dict(),
            }
        )
        log.info(json.dumps({"event": "epoch", "epoch": epoch, "val_f1": val.f1, "loss": history[-1]["losses"]["total"]}))
        if val.f1 > best_f1:
            best_f1, best_epoch, stale = val.f1, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    report = RunReport(
        config={"train": cfg.to_dict(), "encoder": enc_cfg.to_dict(), "mix": asdict(mix_cfg)},
        seed=cfg.seed,
        epochs=history,
        best_epoch=best_epoch,
        validation=history[best_epoch]["validation"],
        test={source.place_type_id: evaluate_model(model, test_ds).to_dict()},
        splits={
            "train": train_ds.map_ids(),
            "validation": val_ds.map_ids(),
            "test": test_ds.map_ids(),
            "target_unlabeled": [] if target is None else target.map_ids(),
        },
        wall_clock_s=time.perf_counter() - started,
    )
    return model, report


def encoder_config_for(ds: PlaceTypeDataset, **overrides) -> EncoderConfig:
    return EncoderConfig(n_categories=len(ds.vocabulary), **overrides)


def train(
    source: PlaceTypeDataset,
    target_unlabeled: PlaceTypeDataset,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig | None = None,
    mix_cfg: MixConfig | None = None,
    dtype: torch.dtype = torch.float32,
    model: SpatialDAModel | None = None,
) -> tuple[SpatialDAModel, RunReport]:
    """Domain-adaptive training from a labelled source and an unlabelled target.

    The source is split by ``cfg.split``; the best epoch by source-validation
    weighted F1 is restored. Target labels are never accepted.
    """
    if target_unlabeled.is_labeled:
        raise UnsupervisedContractError("target place-type must be unlabelled; call strip_labels() first")
    if tuple(source.vocabulary) != tuple(target_unlabeled.vocabulary):
        raise ValueError("source and target vocabularies differ")
    enc_cfg = enc_cfg or encoder_config_for(source)
    mix_cfg = mix_cfg or MixConfig(seed=cfg.seed)
    return _fit(source, target_unlabeled, cfg, enc_cfg, mix_cfg, cfg.effective_weights(), dtype, model)


def train_supervised_target(
    target: PlaceTypeDataset,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[SpatialDAModel, RunReport]:
    """Plain supervised training on the labelled target: the upper-bound reference."""
    if not target.is_labeled:
        raise ValueError("supervised target training needs labels")
    cfg = replace(cfg, mode="no_adaptation")
    enc_cfg = enc_cfg or encoder_config_for(target)
    return _fit(target, None, cfg, enc_cfg, MixConfig(seed=cfg.seed), cfg.effective_weights(), dtype, None)
