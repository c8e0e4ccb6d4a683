"""Visual-semantic mapper: features -> semantics, pretrained on seen data.

One hidden ReLU layer, linear output, trained with a squared-error semantic
reconstruction loss. After training the mapper is frozen and only consumed by
the cycle-consistency term.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import FeatureSet, SemanticTable, SplitSpec
from .errors import ValidationError


class Mapper(nn.Module):
    def __init__(self, feature_dim: int, semantic_dim: int, hidden: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.semantic_dim = semantic_dim
        self.hidden = hidden
        self.fc1 = nn.Linear(feature_dim, hidden, dtype=torch.float64)
        self.fc2 = nn.Linear(hidden, semantic_dim, dtype=torch.float64)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(f)))


def init_mapper(feature_dim: int, semantic_dim: int, hidden: int, seed: int) -> Mapper:
    torch.manual_seed(seed)
    return Mapper(feature_dim, semantic_dim, hidden)


def map_to_semantics(mapper: Mapper, f) -> np.ndarray:
    """Forward one feature vector (or an (n, D) batch) through the mapper."""
    arr = torch.as_tensor(np.asarray(f, dtype=np.float64))
    single = arr.ndim == 1
    if single:
        arr = arr.unsqueeze(0)
    if arr.shape[-1] != mapper.feature_dim:
        raise ValidationError(
            f"feature length {arr.shape[-1]} does not match mapper input {mapper.feature_dim}"
        )
    with torch.no_grad():
        out = mapper(arr)
    out = out.numpy()
    return out[0] if single else out


def reconstruction_loss(mapper: Mapper, features: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the squared L2 reconstruction error."""
    return ((targets - mapper(features)) ** 2).sum(dim=1).mean()


def train_mapper(
    train: FeatureSet,
    table: SemanticTable,
    split: SplitSpec,
    epochs: int,
    lr: float,
    seed: int,
    hidden: int | None = None,
    batch: int = 128,
) -> Mapper:
    """Fit the mapper on seen-class features with Adam; deterministic per seed."""
    if len(train) == 0:
        raise ValidationError("cannot train mapper on an empty feature set")
    if epochs < 0:
        raise ValidationError("epochs must be non-negative")
    seen = set(split.seen_ids)
    bad = [int(c) for c in np.unique(train.labels) if int(c) not in seen]
    if bad:
        raise ValidationError(f"mapper training data contains unseen labels {bad}")
    hidden = 2 * table.dim if hidden is None else hidden
    mapper = init_mapper(train.dim, table.dim, hidden, seed)
    if epochs == 0:
        return mapper

    features = torch.as_tensor(train.features)
    targets = torch.as_tensor(
        np.stack([table.vector(int(c)) for c in train.labels])
    )
    rng = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(mapper.parameters(), lr=lr)
    n = len(train)
    for _ in range(epochs):
        perm = torch.randperm(n, generator=rng)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            loss = reconstruction_loss(mapper, features[idx], targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return mapper


def save_mapper(mapper: Mapper, path: str | Path) -> None:
    meta = {
        "feature_dim": mapper.feature_dim,
        "semantic_dim": mapper.semantic_dim,
        "hidden": mapper.hidden,
    }
    save_checkpoint(path, "mapper", meta, mapper.state_dict())


def load_mapper(path: str | Path) -> Mapper:
    meta, state = load_checkpoint(path, "mapper")
    mapper = Mapper(meta["feature_dim"], meta["semantic_dim"], meta["hidden"])
    mapper.load_state_dict(state)
    return mapper
