"""Linear softmax classifier heads.

The seen head (foreground seen classes plus background) regularizes the
synthesizer and anchors the detector; the unseen head is trained on
synthesized features; `assemble_head` concatenates both into the full
S+U+1-way classifier, optionally shifting unseen logits by a calibration
offset fit on held-out synthesized features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import FeatureSet, SplitSpec
from .errors import ValidationError


@dataclass
class ClassifierHead:
    """Row-per-class linear weights; probabilities come from a softmax over rows."""

    class_ids: list[int]
    W: torch.Tensor
    b: torch.Tensor

    def __post_init__(self) -> None:
        self.class_ids = [int(c) for c in self.class_ids]
        self.W = torch.as_tensor(self.W, dtype=torch.float64)
        self.b = torch.as_tensor(self.b, dtype=torch.float64)
        k = len(self.class_ids)
        if len(set(self.class_ids)) != k:
            raise ValidationError("duplicate class ids in head")
        if self.W.shape[0] != k or self.b.shape != (k,):
            raise ValidationError("head weight shapes do not match the class list")
        if not (torch.isfinite(self.W).all() and torch.isfinite(self.b).all()):
            raise ValidationError("head parameters must be finite")
        self._index = {c: i for i, c in enumerate(self.class_ids)}

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    def row(self, cid: int) -> int:
        try:
            return self._index[cid]
        except KeyError:
            raise ValidationError(f"class {cid} not in head") from None

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.feature_dim:
            raise ValidationError(
                f"feature length {features.shape[-1]} does not match head dim {self.feature_dim}"
            )
        return features @ self.W.T + self.b


def classify(head: ClassifierHead, f) -> np.ndarray:
    """Softmax probabilities over the head's classes for one vector or a batch."""
    arr = torch.as_tensor(np.asarray(f, dtype=np.float64))
    single = arr.ndim == 1
    if single:
        arr = arr.unsqueeze(0)
    with torch.no_grad():
        probs = torch.softmax(head.logits(arr), dim=1)
    probs = probs.numpy()
    return probs[0] if single else probs


def argmax_labels(head: ClassifierHead, features: np.ndarray, exclude: Sequence[int] = ()) -> np.ndarray:
    """Hard class assignments, optionally masking out class ids (e.g. background)."""
    arr = torch.as_tensor(np.asarray(features, dtype=np.float64))
    with torch.no_grad():
        logits = head.logits(arr)
    for cid in exclude:
        logits[:, head.row(cid)] = -np.inf
    idx = logits.argmax(dim=1).numpy()
    ids = np.array(head.class_ids)
    return ids[idx]


def init_head(class_ids: Sequence[int], feature_dim: int, seed: int) -> ClassifierHead:
    torch.manual_seed(seed)
    k = len(class_ids)
    w = torch.empty((k, feature_dim), dtype=torch.float64)
    torch.nn.init.normal_(w, std=0.01)
    return ClassifierHead(list(class_ids), w, torch.zeros(k, dtype=torch.float64))


def train_classifier(
    features: FeatureSet,
    class_ids: Sequence[int],
    epochs: int = 120,
    lr: float = 0.05,
    seed: int = 0,
    batch: int = 128,
) -> ClassifierHead:
    """Cross-entropy training of a linear softmax head; deterministic per seed."""
    if len(features) == 0:
        raise ValidationError("cannot train a classifier on an empty feature set")
    if epochs < 0:
        raise ValidationError("epochs must be non-negative")
    class_ids = [int(c) for c in class_ids]
    index = {c: i for i, c in enumerate(class_ids)}
    bad = [int(c) for c in np.unique(features.labels) if int(c) not in index]
    if bad:
        raise ValidationError(f"feature labels {bad} outside the head class list")
    head = init_head(class_ids, features.dim, seed)
    if epochs == 0:
        return head

    x = torch.as_tensor(features.features)
    y = torch.as_tensor(np.array([index[int(c)] for c in features.labels]), dtype=torch.long)
    w = head.W.clone().requires_grad_(True)
    b = head.b.clone().requires_grad_(True)
    opt = torch.optim.Adam([w, b], lr=lr)
    rng = torch.Generator().manual_seed(seed + 1)
    n = len(features)
    for _ in range(epochs):
        perm = torch.randperm(n, generator=rng)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            logits = x[idx] @ w.T + b
            loss = torch.nn.functional.cross_entropy(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return ClassifierHead(class_ids, w.detach(), b.detach())


def assemble_head(
    seen_head: ClassifierHead,
    unseen_head: ClassifierHead,
    split: SplitSpec,
    calibration: float = 0.0,
) -> ClassifierHead:
    """Concatenate seen, unseen, and background rows into one head.

    Row order is seen classes (split order), then the unseen head's classes,
    then background. The calibration offset is added to unseen biases only, so
    with offset 0 within-source logit ordering is preserved exactly.
    """
    if seen_head.feature_dim != unseen_head.feature_dim:
        raise ValidationError("seen/unseen head feature dims differ")
    overlap = set(seen_head.class_ids) & set(unseen_head.class_ids)
    if overlap:
        raise ValidationError(f"seen and unseen heads overlap on classes {sorted(overlap)}")
    extra = set(unseen_head.class_ids) - set(split.unseen_ids)
    if extra:
        raise ValidationError(f"unseen head contains non-unseen classes {sorted(extra)}")
    order = list(split.seen_ids) + list(unseen_head.class_ids) + [split.background_id]
    rows, biases = [], []
    for cid in split.seen_ids:
        i = seen_head.row(cid)
        rows.append(seen_head.W[i])
        biases.append(seen_head.b[i])
    for cid in unseen_head.class_ids:
        i = unseen_head.row(cid)
        rows.append(unseen_head.W[i])
        biases.append(unseen_head.b[i] + calibration)
    i = seen_head.row(split.background_id)
    rows.append(seen_head.W[i])
    biases.append(seen_head.b[i])
    return ClassifierHead(order, torch.stack(rows), torch.stack(biases))


def fit_calibration(
    seen_head: ClassifierHead,
    unseen_head: ClassifierHead,
    split: SplitSpec,
    holdout: FeatureSet,
) -> float:
    """Pick the scalar unseen-logit offset maximizing balanced accuracy on a holdout.

    Candidates are quantiles of the per-sample max-seen minus max-unseen logit
    gap; the smallest candidate achieving the best balanced accuracy wins, so
    the fit is deterministic.
    """
    if len(holdout) == 0:
        raise ValidationError("empty calibration holdout")
    base = assemble_head(seen_head, unseen_head, split, calibration=0.0)
    x = torch.as_tensor(holdout.features)
    with torch.no_grad():
        logits = base.logits(x).numpy()
    seen_cols = [base.row(c) for c in split.seen_ids]
    unseen_cols = [base.row(c) for c in unseen_head.class_ids]
    if not unseen_cols:
        return 0.0
    gaps = logits[:, seen_cols].max(axis=1) - logits[:, unseen_cols].max(axis=1)
    candidates = np.unique(
        np.concatenate([[0.0], np.quantile(gaps, np.linspace(0.0, 1.0, 51))])
    )
    labels = holdout.labels
    classes = np.unique(labels)
    ids = np.array(base.class_ids)
    best_offset, best_score = 0.0, -1.0
    for offset in candidates:
        adjusted = logits.copy()
        adjusted[:, unseen_cols] += offset
        pred = ids[adjusted.argmax(axis=1)]
        recalls = [(pred[labels == c] == c).mean() for c in classes]
        score = float(np.mean(recalls))
        if score > best_score + 1e-12:
            best_offset, best_score = float(offset), score
    return best_offset


def save_head(head: ClassifierHead, path: str | Path) -> None:
    meta = {"class_ids": head.class_ids, "feature_dim": head.feature_dim}
    save_checkpoint(path, "classifier_head", meta, {"W": head.W, "b": head.b})


def load_head(path: str | Path) -> ClassifierHead:
    meta, state = load_checkpoint(path, "classifier_head")
    return ClassifierHead(meta["class_ids"], state["W"], state["b"])
