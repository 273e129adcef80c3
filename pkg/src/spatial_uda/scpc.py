"""Spatial contrastive predictive coding.

Maps of one place-type play the role CPC gives to consecutive time steps: a GRU
reads a window of same-place latents, an affine head predicts the latent of the
next map in that (shuffled) sequence, and the prediction is scored against that
positive and against every latent from the other place-type(s) with InfoNCE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import torch
from torch import nn

NORM_EPS = 1e-12


@dataclass
class PairingPlan:
    positives: list[tuple[int, int]]  # (slot, latent index)
    negatives: list[list[int]]  # per slot
    windows: list[list[int]] = field(default_factory=list)  # per slot, context latent indices in order

    def __len__(self) -> int:
        return len(self.positives)

    def validate(self, place_ids) -> None:
        place_ids = np.asarray(place_ids)
        if len(self.negatives) != len(self.positives):
            raise ValueError("one negative set per slot required")
        for (slot, pos), negs in zip(self.positives, self.negatives):
            if pos in negs or len(set(negs)) != len(negs):
                raise ValueError(f"slot {slot}: positive and negatives must be distinct")
            if any(place_ids[k] == place_ids[pos] for k in negs):
                raise ValueError(f"slot {slot}: a negative shares the positive's place-type")
            if self.windows:
                win = self.windows[slot]
                if not win or any(place_ids[k] != place_ids[pos] for k in win):
                    raise ValueError(f"slot {slot}: context window must be same-place and nonempty")


@dataclass
class LatentBatch:
    latents: torch.Tensor  # (n, D)
    place_ids: np.ndarray  # (n,)
    predicted: torch.Tensor  # (slots, D)
    temperature: float = 0.1
    context: torch.Tensor | None = None  # (slots, D_ctx)

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.latents.ndim != 2 or self.predicted.ndim != 2:
            raise ValueError("latents and predictions must be 2-D")
        if self.latents.shape[1] != self.predicted.shape[1]:
            raise ValueError("latent and predicted dimensions differ")
        self.place_ids = np.asarray(self.place_ids)
        if self.place_ids.shape != (self.latents.shape[0],):
            raise ValueError("one place id per latent required")


def admissible_pairs(place_ids) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """All unordered same-place (positive) and cross-place (negative) index pairs."""
    place_ids = list(place_ids)
    pos, neg = [], []
    for i, j in combinations(range(len(place_ids)), 2):
        (pos if place_ids[i] == place_ids[j] else neg).append((i, j))
    return pos, neg


def build_pairing_plan(
    place_ids,
    rng: np.random.Generator,
    window: int = 4,
    max_negatives: int | None = None,
) -> PairingPlan:
    """Shuffle each place-type's latents into a sequence; each slot predicts the next one.

    Slot ``j`` of a sequence ``s`` uses ``s[max(0, j-window+1) : j+1]`` as context
    and ``s[j+1]`` as the positive. Negatives are all latents of other
    place-types, optionally capped at ``max_negatives`` by random choice.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    place_ids = np.asarray(place_ids)
    positives, negatives, windows = [], [], []
    for place in sorted(set(place_ids.tolist()), key=str):
        members = np.flatnonzero(place_ids == place)
        others = np.flatnonzero(place_ids != place)
        seq = members[rng.permutation(len(members))].tolist()
        for j in range(len(seq) - 1):
            negs = others
            if max_negatives is not None and len(others) > max_negatives:
                negs = np.sort(rng.choice(others, size=max_negatives, replace=False))
            positives.append((len(positives), seq[j + 1]))
            negatives.append([int(k) for k in negs])
            windows.append(seq[max(0, j - window + 1) : j + 1])
    return PairingPlan(positives, negatives, windows)


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis with norms clamped at 1e-12."""
    na = torch.clamp(a.norm(dim=-1), min=NORM_EPS)
    nb = torch.clamp(b.norm(dim=-1), min=NORM_EPS)
    return (a * b).sum(dim=-1) / (na * nb)


class ContextPredictor(nn.Module):
    """GRU context aggregator plus the affine latent predictor."""

    def __init__(self, latent_dim: int, context_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.context_dim = context_dim
        self.gru = nn.GRUCell(latent_dim, context_dim)
        self.proj = nn.Linear(context_dim, latent_dim)

    def build_context(self, sequence: torch.Tensor) -> torch.Tensor:
        """Final GRU state after reading ``sequence`` (L, D) from a zero state."""
        if sequence.ndim != 2 or sequence.shape[0] < 1:
            raise ValueError("context needs a nonempty (L, D) sequence")
        if sequence.shape[1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {sequence.shape[1]}")
        h = sequence.new_zeros(1, self.context_dim)
        for step in sequence:
            h = self.gru(step.unsqueeze(0), h)
        return h.squeeze(0)

    def predict_latent(self, context: torch.Tensor) -> torch.Tensor:
        if context.shape[-1] != self.context_dim:
            raise ValueError(f"expected context dim {self.context_dim}, got {context.shape[-1]}")
        return self.proj(context)

    def forward(self, latents: torch.Tensor, plan: PairingPlan) -> tuple[torch.Tensor, torch.Tensor]:
        """(contexts, predictions), one row per plan slot."""
        if not len(plan):
            empty = latents.new_zeros(0, self.context_dim)
            return empty, latents.new_zeros(0, self.latent_dim)
        ctx = torch.stack([self.build_context(latents[w]) for w in plan.windows])
        return ctx, self.predict_latent(ctx)


def scpc_loss(batch: LatentBatch, plan: PairingPlan) -> torch.Tensor:
    """InfoNCE over slots: positive similarity vs. positive + negatives, at temperature tau."""
    if len(plan) == 0:
        raise ValueError("pairing plan has no slots")
    if batch.predicted.shape[0] != len(plan):
        raise ValueError("one prediction per slot required")
    plan.validate(batch.place_ids)
    terms = []
    for (slot, pos), negs in zip(plan.positives, plan.negatives):
        cand = batch.latents[[pos] + list(negs)]
        logits = cosine_sim(batch.predicted[slot].unsqueeze(0), cand) / batch.temperature
        terms.append(torch.logsumexp(logits, dim=0) - logits[0])
    return torch.stack(terms).mean()
