"""Edge-convolution point-set encoder, task heads and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import PointMap
from .scpc import ContextPredictor

CHECKPOINT_FORMAT_VERSION = 1

# head name -> number of outputs; cls_mix is a single sigmoid logit
HEADS = {"supervised": 2, "cls_mix": 1, "cls_maskMix": 3, "cls_softMix": 2}


@dataclass(frozen=True)
class EncoderConfig:
    n_categories: int
    k_neighbors: int = 8
    embed_dim_category: int = 8
    layer_widths: tuple[int, ...] = (64, 64)
    global_dim: int = 128
    pooling: str = "max"
    category_encoding: str = "embedding"
    head_hidden: int = 64
    context_dim: int = 64
    n_classes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_widths", tuple(self.layer_widths))
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ValueError("layer widths must be positive")
        if min(self.global_dim, self.head_hidden, self.context_dim, self.n_categories) < 1:
            raise ValueError("dimensions must be positive")
        if self.pooling not in ("max", "mean"):
            raise ValueError("pooling must be 'max' or 'mean'")
        if self.category_encoding not in ("embedding", "onehot"):
            raise ValueError("category_encoding must be 'embedding' or 'onehot'")

    @property
    def category_dim(self) -> int:
        return self.embed_dim_category if self.category_encoding == "embedding" else self.n_categories

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d


def knn_indices(x: torch.Tensor, k: int) -> torch.Tensor:
    """(B, N, k) indices of each point's k nearest other points in feature space."""
    with torch.no_grad():
        sq = (x * x).sum(-1)
        d = sq.unsqueeze(-1) + sq.unsqueeze(-2) - 2.0 * x @ x.transpose(-1, -2)
        d.diagonal(dim1=-2, dim2=-1).fill_(float("inf"))
        return d.topk(k, dim=-1, largest=False).indices


class EdgeConv(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, k: int):
        super().__init__()
        self.k = k
        self.lin = nn.Linear(2 * in_dim, out_dim)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, graph_on: torch.Tensor | None = None) -> torch.Tensor:
        B, N, C = x.shape
        idx = knn_indices(x if graph_on is None else graph_on, self.k)
        # lin([x_i, x_j - x_i]) == (W_c - W_d) x_i + b + W_d x_j, so project per point then gather
        w_c, w_d = self.lin.weight[:, :C], self.lin.weight[:, C:]
        own = x @ (w_c - w_d).T + self.lin.bias
        nbr = (x @ w_d.T).reshape(B * N, -1)
        flat = (idx + (torch.arange(B) * N).view(B, 1, 1)).reshape(-1)
        edge = own.unsqueeze(2) + nbr[flat].reshape(B, N, self.k, -1)
        return self.act(edge).max(dim=2).values


class PointSetEncoder(nn.Module):
    """Location + category features, dynamic k-NN edge convolutions, symmetric pooling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.category_encoding == "embedding":
            self.embed = nn.Embedding(cfg.n_categories, cfg.embed_dim_category)
        dims = [2 + cfg.category_dim, *cfg.layer_widths]
        self.convs = nn.ModuleList(EdgeConv(a, b, cfg.k_neighbors) for a, b in zip(dims[:-1], dims[1:]))
        self.fuse = nn.Linear(sum(cfg.layer_widths), cfg.global_dim)
        self.act = nn.LeakyReLU(0.2)

    def point_features(self, xy: torch.Tensor, cats: torch.Tensor) -> torch.Tensor:
        if self.cfg.category_encoding == "embedding":
            c = self.embed(cats)
        else:
            c = nn.functional.one_hot(cats, self.cfg.n_categories).to(xy.dtype)
        return torch.cat([xy, c], dim=-1)

    def forward(self, xy: torch.Tensor, cats: torch.Tensor) -> torch.Tensor:
        if xy.shape[1] < self.cfg.k_neighbors + 1:
            raise ValueError(f"need at least {self.cfg.k_neighbors + 1} points, got {xy.shape[1]}")
        x = self.point_features(xy, cats)
        outs = []
        for i, conv in enumerate(self.convs):
            # the first graph is spatial: untrained embeddings would otherwise swamp location
            x = conv(x, xy if i == 0 else None)
            outs.append(x)
        h = self.act(self.fuse(torch.cat(outs, dim=-1)))
        return h.max(dim=1).values if self.cfg.pooling == "max" else h.mean(dim=1)


class Head(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.LeakyReLU(0.2), nn.Linear(hidden, out_dim))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class SpatialDAModel(nn.Module):
    """Every trainable piece: encoder, the four classification heads, SCPC context/predictor."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointSetEncoder(cfg)
        n_out = dict(HEADS, supervised=cfg.n_classes)
        self.heads = nn.ModuleDict({name: Head(cfg.global_dim, cfg.head_hidden, n) for name, n in n_out.items()})
        self.context = ContextPredictor(cfg.global_dim, cfg.context_dim)

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder.fuse.weight.dtype

    def head_probs(self, z: torch.Tensor, head: str) -> torch.Tensor:
        if head not in self.heads:
            raise KeyError(f"unknown head {head!r}; expected one of {sorted(self.heads)}")
        logits = self.heads[head](z)
        if head == "cls_mix":
            return torch.sigmoid(logits.squeeze(-1))
        return torch.softmax(logits, dim=-1)


def unique_points(pm: PointMap) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (x, y, category) rows: the encoder sees a map as a set."""
    rows = np.column_stack([pm.xy, pm.categories.astype(np.float64)])
    rows = np.unique(rows, axis=0)
    return rows[:, :2], rows[:, 2].astype(np.int64)


def encode_maps(maps: Sequence[PointMap], model: SpatialDAModel) -> torch.Tensor:
    """(len(maps), D) latents; maps of equal size are batched together."""
    if not maps:
        raise ValueError("no maps to encode")
    V = model.cfg.n_categories
    prepared = [unique_points(m) for m in maps]
    for m, (_, c) in zip(maps, prepared):
        if c.max() >= V:
            raise ValueError(f"map {m.map_id}: unknown category code {int(c.max())}")
    groups: dict[int, list[int]] = {}
    for i, (xy, _) in enumerate(prepared):
        groups.setdefault(len(xy), []).append(i)
    out: list[torch.Tensor | None] = [None] * len(maps)
    for members in groups.values():
        xy = torch.as_tensor(np.stack([prepared[i][0] for i in members]), dtype=model.dtype)
        cats = torch.as_tensor(np.stack([prepared[i][1] for i in members]))
        z = model.encoder(xy, cats)
        for row, i in enumerate(members):
            out[i] = z[row]
    return torch.stack(out)


def encode(pm: PointMap, model: SpatialDAModel) -> torch.Tensor:
    return encode_maps([pm], model)[0]


def classify(z: torch.Tensor, head: str, model: SpatialDAModel) -> torch.Tensor:
    return model.head_probs(z, head)


@torch.no_grad()
def predict(maps: Sequence[PointMap], model: SpatialDAModel, batch_size: int = 32) -> np.ndarray:
    """Arg-max supervised-head class per map."""
    was_training = model.training
    model.eval()
    preds = []
    for s in range(0, len(maps), batch_size):
        z = encode_maps(maps[s : s + batch_size], model)
        preds.append(model.head_probs(z, "supervised").argmax(dim=-1).numpy())
    model.train(was_training)
    return np.concatenate(preds)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: SpatialDAModel, path: str | Path, extra: dict | None = None) -> Path:
    """npz of named parameter arrays plus a JSON ``__meta__`` entry."""
    path = Path(path)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder_config": model.cfg.to_dict(),
        "dtype": str(model.dtype).removeprefix("torch."),
        "extra": extra or {},
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[SpatialDAModel, dict]:
    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        version = meta.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version!r}")
        model = SpatialDAModel(EncoderConfig(**meta["encoder_config"]))
        model.to(getattr(torch, meta["dtype"]))
        state = {k: torch.from_numpy(npz[k].copy()) for k in npz.files if k != "__meta__"}
    model.load_state_dict(state)
    return model, meta
