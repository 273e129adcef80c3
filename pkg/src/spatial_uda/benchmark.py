"""The frozen planted-shift benchmark and the method-comparison harness."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import PlaceTypeDataset, SplitSpec, split_dataset, subset_expand
from .encoder import EncoderConfig, SpatialDAModel
from .evaluation import MetricReport
from .mixmask import MixConfig
from .synthetic import ArrangementRule, GenConfig, RuleKind, generate_shifted_pair
from .trainer import RunReport, TrainConfig, evaluate_model, train, train_supervised_target

VOCABULARY = ("A", "B", "C", "D", "E")
METHODS = ("supervised", "no_adaptation", "full", "smum_only", "scpc_only")


def source_config(seed: int = 0, n_maps_per_class: int = 60, points_per_map: int = 512) -> GenConfig:
    """PT1: class 1 plants <A,B> pairs, class 0 scatters A and B independently."""
    return GenConfig(
        vocabulary=VOCABULARY,
        class_rules={
            0: ArrangementRule(RuleKind.ABSENT),
            1: ArrangementRule(RuleKind.PAIRWISE, ("A", "B"), 0.05),
        },
        n_maps_per_class=n_maps_per_class,
        points_per_map=points_per_map,
        n_clusters=20,
        cluster_size=3,
        cluster_spread=0.012,
        seed=seed,
        place_type_id="PT1",
    )


def target_config(seed: int = 0, n_maps_per_class: int = 60, points_per_map: int = 512) -> GenConfig:
    """PT2: class 1 plants <A,B,C> triples, sparser and looser than PT1's pairs."""
    return GenConfig(
        vocabulary=VOCABULARY,
        class_rules={
            0: ArrangementRule(RuleKind.ABSENT),
            1: ArrangementRule(RuleKind.THREEWAY, ("A", "B", "C"), 0.05),
        },
        n_maps_per_class=n_maps_per_class,
        points_per_map=points_per_map,
        n_clusters=8,
        cluster_size=4,
        cluster_spread=0.03,
        seed=seed + 1,
        place_type_id="PT2",
    )


@dataclass
class BenchmarkData:
    source: PlaceTypeDataset
    target_train: PlaceTypeDataset  # labelled; strip before adaptation
    target_val: PlaceTypeDataset
    target_test: PlaceTypeDataset


def build_benchmark(seed: int = 0, subset_size: int = 512, split: SplitSpec | None = None) -> BenchmarkData:
    split = split or SplitSpec(seed=seed)
    src, tgt = generate_shifted_pair(source_config(seed), target_config(seed))
    src, tgt = subset_expand(src, subset_size), subset_expand(tgt, subset_size)
    t_train, t_val, t_test = split_dataset(tgt, split)
    return BenchmarkData(src, t_train, t_val, t_test)


SSL_WEIGHT = 0.1  # larger weights let the self-supervised terms drown the source signal


def default_train_config(mode: str, seed: int) -> TrainConfig:
    weights = {t: SSL_WEIGHT for t in ("cls_mix", "cls_maskMix", "cls_softMix", "scpc")}
    return TrainConfig(
        mode=mode,
        seed=seed,
        epochs=25,
        batch_size=8,
        learning_rate=1e-3,
        patience=10,
        loss_weights=weights,
        split=SplitSpec(seed=seed),
    )


def default_encoder_config() -> EncoderConfig:
    return EncoderConfig(n_categories=len(VOCABULARY), k_neighbors=8, layer_widths=(32, 32), global_dim=64, head_hidden=32, context_dim=32, pooling="mean")


def run_method(
    data: BenchmarkData,
    method: str,
    seed: int,
    cfg: TrainConfig | None = None,
    enc_cfg: EncoderConfig | None = None,
    mix_cfg: MixConfig | None = None,
) -> tuple[MetricReport, RunReport, SpatialDAModel]:
    """Train one comparison row and score it on the target test split."""
    enc_cfg = enc_cfg or default_encoder_config()
    if method == "supervised":
        cfg = cfg or default_train_config("no_adaptation", seed)
        labelled = _concat(data.target_train, data.target_val)
        model, report = train_supervised_target(labelled, cfg, enc_cfg)
    else:
        cfg = replace(cfg, mode=method) if cfg else default_train_config(method, seed)
        model, report = train(data.source, data.target_train.strip_labels(), cfg, enc_cfg, mix_cfg or MixConfig(seed=seed))
    target = evaluate_model(model, data.target_test)
    report.test[data.target_test.place_type_id] = target.to_dict()
    return target, report, model


def _concat(a: PlaceTypeDataset, b: PlaceTypeDataset) -> PlaceTypeDataset:
    labels = None
    if a.labels is not None and b.labels is not None:
        labels = np.concatenate([a.labels, b.labels])
    return replace(a, maps=a.maps + b.maps, labels=labels)
