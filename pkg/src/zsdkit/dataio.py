"""File ingestion, run configuration, and the deterministic synthetic benchmark.

CSV is used for vector data (semantics, features) and JSON for structured
config/split files. Everything here is a pure function of its inputs and an
explicit seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import IngestionError, ValidationError

# Geometry/noise constants for the synthetic benchmark. The canvas is an
# abstract pixel frame; cluster sigma is the per-dimension feature noise
# around each class mean.
CANVAS_W = 1000.0
CANVAS_H = 1000.0
CLUSTER_SIGMA = 0.3
BACKGROUND_SIGMA = 0.3
PROPOSALS_PER_OBJECT = 2
PROPOSAL_FEATURE_NOISE = 0.05
# Engineered unseen/seen pairs sit at this fraction of the 5th percentile of
# base pairwise semantic distances, with a safety band on either side so the
# percentile test is robust to resampling. The fraction keeps the pair
# decisively the closest while leaving the class clusters separable at the
# benchmark's noise level.
SIMILAR_DISTANCE_FRACTION = 0.55
SIMILAR_PERCENTILE = 5.0
_MAX_BENCH_ATTEMPTS = 100

FULL_FRAME = None  # set after Box is defined


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by top-left corner and positive width/height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box width/height must be positive, got w={self.w}, h={self.h}")

    def area(self) -> float:
        return self.w * self.h


FULL_FRAME = Box(0.0, 0.0, CANVAS_W, CANVAS_H)


@dataclass(frozen=True)
class SplitSpec:
    """Seen/unseen class id lists plus the background class id."""

    seen_ids: tuple[int, ...]
    unseen_ids: tuple[int, ...]
    background_id: int

    def __post_init__(self) -> None:
        seen = tuple(int(c) for c in self.seen_ids)
        unseen = tuple(int(c) for c in self.unseen_ids)
        object.__setattr__(self, "seen_ids", seen)
        object.__setattr__(self, "unseen_ids", unseen)
        object.__setattr__(self, "background_id", int(self.background_id))
        if not seen or not unseen:
            raise ValidationError("seen and unseen id lists must be non-empty")
        if any(c < 0 for c in seen + unseen) or self.background_id < 0:
            raise ValidationError("class ids must be non-negative")
        if len(set(seen)) != len(seen) or len(set(unseen)) != len(unseen):
            raise ValidationError("duplicate ids within a split list")
        overlap = set(seen) & set(unseen)
        if overlap:
            raise ValidationError(f"seen/unseen overlap: {sorted(overlap)}")
        if self.background_id in seen or self.background_id in unseen:
            raise ValidationError(f"background id {self.background_id} also listed as a class")

    @property
    def foreground_ids(self) -> tuple[int, ...]:
        return self.seen_ids + self.unseen_ids


@dataclass
class SemanticTable:
    """Per-class semantic vectors with display names.

    `entries` maps class id -> (name, vector); insertion order is preserved
    and defines the row order used by `matrix()`.
    """

    dim: int
    entries: dict[int, tuple[str, np.ndarray]]

    def __post_init__(self) -> None:
        for cid, (name, vec) in self.entries.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ValidationError(
                    f"class {cid}: vector length {vec.shape} does not match dim {self.dim}"
                )
            self.entries[cid] = (str(name), vec)

    def ids(self) -> list[int]:
        return list(self.entries)

    def __contains__(self, cid: int) -> bool:
        return cid in self.entries

    def name(self, cid: int) -> str:
        return self._entry(cid)[0]

    def vector(self, cid: int) -> np.ndarray:
        return self._entry(cid)[1]

    def _entry(self, cid: int) -> tuple[str, np.ndarray]:
        try:
            return self.entries[cid]
        except KeyError:
            raise ValidationError(f"class {cid} has no semantic entry") from None

    def matrix(self, ids: Sequence[int] | None = None) -> np.ndarray:
        ids = list(self.entries) if ids is None else list(ids)
        return np.stack([self.vector(c) for c in ids]) if ids else np.empty((0, self.dim))

    def covers(self, split: SplitSpec) -> bool:
        return all(c in self.entries for c in split.foreground_ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemanticTable):
            return NotImplemented
        if self.dim != other.dim or list(self.entries) != list(other.entries):
            return False
        return all(
            self.entries[c][0] == other.entries[c][0]
            and np.array_equal(self.entries[c][1], other.entries[c][1])
            for c in self.entries
        )


@dataclass
class FeatureSet:
    """Object records: image id, box, class label, D-dimensional feature.

    Stored column-wise (features as an (n, dim) float64 matrix) for numerics;
    `records()` yields row tuples in file order.
    """

    dim: int
    image_ids: list[str]
    boxes: list[Box]
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, self.dim)
        n = len(self.image_ids)
        if not (len(self.boxes) == self.labels.shape[0] == self.features.shape[0] == n):
            raise ValidationError("feature set columns have mismatched lengths")

    def __len__(self) -> int:
        return len(self.image_ids)

    def records(self) -> Iterator[tuple[str, Box, int, np.ndarray]]:
        for i in range(len(self)):
            yield self.image_ids[i], self.boxes[i], int(self.labels[i]), self.features[i]

    @classmethod
    def empty(cls, dim: int) -> "FeatureSet":
        return cls(dim, [], [], np.empty(0, dtype=np.int64), np.empty((0, dim)))

    @classmethod
    def from_records(
        cls, dim: int, records: Sequence[tuple[str, Box, int, np.ndarray]]
    ) -> "FeatureSet":
        if not records:
            return cls.empty(dim)
        ids = [r[0] for r in records]
        boxes = [r[1] for r in records]
        labels = np.array([r[2] for r in records], dtype=np.int64)
        feats = np.stack([np.asarray(r[3], dtype=np.float64) for r in records])
        return cls(dim, ids, boxes, labels, feats)

    def subset(self, mask: np.ndarray) -> "FeatureSet":
        idx = np.flatnonzero(mask)
        return FeatureSet(
            self.dim,
            [self.image_ids[i] for i in idx],
            [self.boxes[i] for i in idx],
            self.labels[idx],
            self.features[idx],
        )

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        if self.dim != other.dim:
            raise ValidationError(f"feature dims differ: {self.dim} vs {other.dim}")
        return FeatureSet(
            self.dim,
            self.image_ids + other.image_ids,
            self.boxes + other.boxes,
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.features, other.features]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.image_ids == other.image_ids
            and self.boxes == other.boxes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class BenchSpec:
    """Parameters of the procedurally generated benchmark."""

    n_classes: int
    n_unseen: int
    d: int
    D: int
    images: int
    objects_per_image: tuple[int, int]
    proposal_jitter: float = 0.15
    background_rate: float = 0.25
    similar_pair_count: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.objects_per_image
        if min(self.n_classes, self.n_unseen, self.d, self.D, self.images, lo) <= 0 or hi < lo:
            raise ValidationError("benchmark counts and dims must be positive, range ordered")
        if self.n_unseen >= self.n_classes:
            raise ValidationError("n_unseen must be smaller than n_classes")
        if not 0.0 <= self.proposal_jitter <= 0.5:
            raise ValidationError("proposal_jitter must lie in [0, 0.5]")
        if not 0.0 <= self.background_rate < 1.0:
            raise ValidationError("background_rate must lie in [0, 1)")
        if self.similar_pair_count < 0 or self.similar_pair_count > self.n_unseen:
            raise ValidationError("similar_pair_count must lie in [0, n_unseen]")


# ---------------------------------------------------------------------------
# Run configuration


_CONFIG_INT_FIELDS = {
    "batch": (1, None),
    "epochs": (0, None),
    "hidden": (1, None),
    "critic_steps": (1, None),
    "z_dim": (0, None),
    "mapper_hidden": (0, None),
    "mapper_epochs": (0, None),
    "head_epochs": (0, None),
    "n_per_class": (0, None),
    "recall_k": (0, None),
}
_CONFIG_FLOAT_FIELDS = {
    "alpha1": (0.0, None),
    "alpha2": (0.0, None),
    "alpha3": (0.0, None),
    "alpha4": (0.0, None),
    "alpha5": (0.0, None),
    "gp_lambda": (0.0, None),
    "lr": (1e-12, None),
    "mapper_lr": (1e-12, None),
    "head_lr": (1e-12, None),
    "shrinkage": (0.0, 1.0),
    "margin_low": (1e-12, None),
    "margin_high": (1e-12, None),
    "nms_threshold": (0.0, 1.0),
    "iou_threshold": (1e-12, 1.0),
    "score_floor": (0.0, 1.0),
    "calibration": (None, None),
}
_CONFIG_BOOL_FIELDS = {"triplets_include_unseen", "select_best_epoch"}


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters for the whole pipeline; defaults are the reference values.

    z_dim / mapper_hidden of 0 mean "derive from the semantic dimension"
    (z_dim = d, mapper_hidden = 2d).
    """

    alpha1: float = 1.0
    alpha2: float = 0.01
    alpha3: float = 0.01
    alpha4: float = 0.01
    alpha5: float = 0.1
    gp_lambda: float = 10.0
    lr: float = 0.0005
    batch: int = 128
    epochs: int = 55
    hidden: int = 4096
    critic_steps: int = 5
    z_dim: int = 0
    triplets_include_unseen: bool = True
    select_best_epoch: bool = True
    mapper_hidden: int = 0
    mapper_epochs: int = 40
    mapper_lr: float = 0.001
    head_epochs: int = 120
    head_lr: float = 0.05
    shrinkage: float = 0.5
    margin_low: float = 0.1
    margin_high: float = 1.0
    n_per_class: int = 250
    nms_threshold: float = 0.7
    iou_threshold: float = 0.5
    recall_k: int = 100
    score_floor: float = 0.0
    calibration: float = 0.0

    def __post_init__(self) -> None:
        if self.margin_low >= self.margin_high:
            raise ValidationError("margin_low must be smaller than margin_high")

    def resolved_z_dim(self, semantic_dim: int) -> int:
        return self.z_dim if self.z_dim > 0 else semantic_dim

    def resolved_mapper_hidden(self, semantic_dim: int) -> int:
        return self.mapper_hidden if self.mapper_hidden > 0 else 2 * semantic_dim

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in _CONFIG_BOOL_FIELDS:
            d[k] = int(d[k])
        return d

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        kwargs = {}
        for key, value in raw.items():
            if key in _CONFIG_BOOL_FIELDS:
                if isinstance(value, bool):
                    kwargs[key] = value
                elif isinstance(value, (int, float)) and value in (0, 1):
                    kwargs[key] = bool(value)
                else:
                    raise ValidationError(f"config key {key!r} must be a boolean or 0/1")
            elif key in _CONFIG_INT_FIELDS:
                lo, hi = _CONFIG_INT_FIELDS[key]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValidationError(f"config key {key!r} must be numeric")
                if float(value) != int(value):
                    raise ValidationError(f"config key {key!r} must be an integer")
                v = int(value)
                if (lo is not None and v < lo) or (hi is not None and v > hi):
                    raise ValidationError(f"config key {key!r}={v} out of range")
                kwargs[key] = v
            elif key in _CONFIG_FLOAT_FIELDS:
                lo, hi = _CONFIG_FLOAT_FIELDS[key]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValidationError(f"config key {key!r} must be numeric")
                v = float(value)
                if not math.isfinite(v):
                    raise ValidationError(f"config key {key!r} must be finite")
                if (lo is not None and v < lo) or (hi is not None and v > hi):
                    raise ValidationError(f"config key {key!r}={v} out of range")
                kwargs[key] = v
            else:
                raise ValidationError(f"unknown config key {key!r}")
        return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    """Read a flat JSON config; absent keys fall back to the defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise IngestionError(f"{path}: config must be a JSON object")
    return RunConfig.from_mapping(raw)


def save_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CSV / JSON loaders


def load_semantic_table(path: str | Path) -> SemanticTable:
    """Parse a `class_id,name,v0..v{d-1}` CSV into a SemanticTable."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 3 or header[:2] != ["class_id", "name"]:
        raise IngestionError(f"{path}: line 1: expected header class_id,name,v0..")
    dim = len(header) - 2
    if header[2:] != [f"v{i}" for i in range(dim)]:
        raise IngestionError(f"{path}: line 1: vector columns must be named v0..v{dim - 1}")
    entries: dict[int, tuple[str, np.ndarray]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 2:
            raise IngestionError(
                f"{path}: line {lineno}: expected {dim + 2} columns, got {len(row)}"
            )
        try:
            cid = int(row[0])
            vec = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError:
            raise IngestionError(f"{path}: line {lineno}: malformed numeric value") from None
        if cid in entries:
            raise IngestionError(f"{path}: line {lineno}: duplicate class {cid}")
        entries[cid] = (row[1], vec)
    return SemanticTable(dim, entries)


def save_semantic_table(table: SemanticTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "name"] + [f"v{i}" for i in range(table.dim)])
        for cid, (name, vec) in table.entries.items():
            writer.writerow([cid, name] + [str(float(v)) for v in vec])


def load_feature_set(path: str | Path) -> FeatureSet:
    """Parse an `image_id,x,y,w,h,label,f0..f{D-1}` CSV into a FeatureSet."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = rows[0]
    fixed = ["image_id", "x", "y", "w", "h", "label"]
    if len(header) < 7 or header[:6] != fixed:
        raise IngestionError(f"{path}: line 1: expected header image_id,x,y,w,h,label,f0..")
    dim = len(header) - 6
    if header[6:] != [f"f{i}" for i in range(dim)]:
        raise IngestionError(f"{path}: line 1: feature columns must be named f0..f{dim - 1}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 6:
            raise IngestionError(
                f"{path}: line {lineno}: expected {dim + 6} columns, got {len(row)}"
            )
        image_id = row[0]
        try:
            x, y, w, h = (float(v) for v in row[1:5])
            label = int(row[5])
            feat = np.array([float(v) for v in row[6:]], dtype=np.float64)
        except ValueError:
            raise IngestionError(f"{path}: line {lineno}: malformed numeric value") from None
        if w <= 0 or h <= 0:
            raise IngestionError(
                f"{path}: line {lineno}: record {image_id!r} has non-positive box size"
            )
        records.append((image_id, Box(x, y, w, h), label, feat))
    return FeatureSet.from_records(dim, records)


def save_feature_set(fs: FeatureSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "x", "y", "w", "h", "label"] + [f"f{i}" for i in range(fs.dim)])
        for image_id, box, label, feat in fs.records():
            writer.writerow(
                [image_id, str(box.x), str(box.y), str(box.w), str(box.h), label]
                + [str(float(v)) for v in feat]
            )


def load_split(path: str | Path) -> SplitSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise IngestionError(f"{path}: split must be a JSON object")
    unknown = set(raw) - {"seen", "unseen", "background_id"}
    if unknown:
        raise ValidationError(f"{path}: unknown split keys {sorted(unknown)}")
    missing = {"seen", "unseen", "background_id"} - set(raw)
    if missing:
        raise IngestionError(f"{path}: missing split keys {sorted(missing)}")
    return SplitSpec(tuple(raw["seen"]), tuple(raw["unseen"]), raw["background_id"])


def save_split(split: SplitSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seen": list(split.seen_ids),
                "unseen": list(split.unseen_ids),
                "background_id": split.background_id,
            },
            fh,
            indent=2,
        )
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic benchmark


def _pairwise_distances(vectors: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - vectors[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def _sample_semantics(
    spec: BenchSpec, rng: np.random.Generator
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Sample class vectors; engineered pairs sit far below the 5th-percentile distance."""
    n = spec.n_classes
    n_seen = n - spec.n_unseen
    base = rng.standard_normal((n, spec.d))
    vectors = base.copy()
    dists = _pairwise_distances(base)
    offdiag = dists[np.triu_indices(n, k=1)]
    pct5 = float(np.percentile(offdiag, SIMILAR_PERCENTILE))
    pairs = []
    for k in range(spec.similar_pair_count):
        unseen_cid = n_seen + k
        seen_cid = k % n_seen
        direction = rng.standard_normal(spec.d)
        direction /= np.linalg.norm(direction)
        delta = SIMILAR_DISTANCE_FRACTION * pct5 * (1.0 + 0.2 * k)
        vectors[unseen_cid] = vectors[seen_cid] + delta * direction
        pairs.append((unseen_cid, seen_cid))
    return vectors, pairs


def _similar_geometry_ok(
    vectors: np.ndarray, n_seen: int, pairs: list[tuple[int, int]]
) -> bool:
    """Engineered unseen classes, and only those, must be sub-percentile close to a seen class."""
    n = vectors.shape[0]
    dists = _pairwise_distances(vectors)
    offdiag = dists[np.triu_indices(n, k=1)]
    pct5 = float(np.percentile(offdiag, SIMILAR_PERCENTILE))
    engineered = {u for u, _ in pairs}
    for u in range(n_seen, n):
        to_seen = dists[u, :n_seen]
        nearest = int(np.argmin(to_seen))
        if u in engineered:
            partner = dict(pairs)[u]
            if nearest != partner or to_seen[nearest] >= 0.75 * pct5:
                return False
        elif to_seen[nearest] <= 1.25 * pct5:
            return False
    return True


def find_similar_pairs(
    table: SemanticTable, split: SplitSpec, percentile: float = SIMILAR_PERCENTILE
) -> list[tuple[int, int]]:
    """Recover the engineered (unseen, nearest seen) pairs from semantic distances alone."""
    ids = [c for c in table.ids() if c != split.background_id]
    vectors = table.matrix(ids)
    dists = _pairwise_distances(vectors)
    offdiag = dists[np.triu_indices(len(ids), k=1)]
    threshold = float(np.percentile(offdiag, percentile))
    index = {c: i for i, c in enumerate(ids)}
    seen_idx = [index[c] for c in split.seen_ids]
    pairs = []
    for u in split.unseen_ids:
        to_seen = dists[index[u], seen_idx]
        j = int(np.argmin(to_seen))
        if to_seen[j] < threshold:
            pairs.append((u, split.seen_ids[j]))
    return sorted(pairs)


def _random_box(rng: np.random.Generator) -> Box:
    w = rng.uniform(50.0, 250.0)
    h = rng.uniform(50.0, 250.0)
    x = rng.uniform(0.0, CANVAS_W - w)
    y = rng.uniform(0.0, CANVAS_H - h)
    return Box(x, y, w, h)


def _emit_images(
    rng: np.random.Generator,
    prefix: str,
    n_images: int,
    class_pool: Sequence[int],
    spec: BenchSpec,
    means: np.ndarray,
) -> list[tuple[str, Box, int, np.ndarray]]:
    lo, hi = spec.objects_per_image
    records = []
    for m in range(n_images):
        image_id = f"{prefix}{m:05d}"
        n_obj = int(rng.integers(lo, hi + 1))
        for _ in range(n_obj):
            cid = int(class_pool[rng.integers(len(class_pool))])
            box = _random_box(rng)
            feat = means[cid] + CLUSTER_SIGMA * rng.standard_normal(spec.D)
            records.append((image_id, box, cid, feat))
    return records


def _jitter_box(box: Box, jitter: float, rng: np.random.Generator) -> Box:
    dx = rng.uniform(-jitter, jitter) * box.w
    dy = rng.uniform(-jitter, jitter) * box.h
    sw = 1.0 + rng.uniform(-jitter, jitter)
    sh = 1.0 + rng.uniform(-jitter, jitter)
    return Box(box.x + dx, box.y + dy, max(box.w * sw, 1.0), max(box.h * sh, 1.0))


def generate_benchmark(
    spec: BenchSpec,
) -> tuple[SemanticTable, SplitSpec, FeatureSet, FeatureSet, FeatureSet]:
    """Build (semantics, split, train_seen, test_all, proposals_test) from a BenchSpec.

    Class feature means are a fixed linear image of the class semantics, so
    visual similarity mirrors semantic similarity by construction. The
    geometry of the engineered similar pairs is verified against the
    percentile criterion and resampled (deterministically) if violated.
    """
    n_seen = spec.n_classes - spec.n_unseen
    rng = None
    for attempt in range(_MAX_BENCH_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt])
        vectors, pairs = _sample_semantics(spec, rng)
        if spec.similar_pair_count == 0 or _similar_geometry_ok(vectors, n_seen, pairs):
            break
    else:
        raise ValidationError(
            "could not realize the requested similar-pair geometry; "
            "reduce similar_pair_count or increase n_classes"
        )

    background_id = spec.n_classes
    split = SplitSpec(tuple(range(n_seen)), tuple(range(n_seen, spec.n_classes)), background_id)
    entries = {
        cid: (f"class_{cid:02d}", vectors[cid]) for cid in range(spec.n_classes)
    }
    table = SemanticTable(spec.d, entries)

    # Fixed linear map semantics -> feature means, then isotropic cluster noise.
    linear_map = rng.normal(0.0, 1.0 / math.sqrt(spec.d), size=(spec.D, spec.d))
    means = vectors @ linear_map.T

    train_records = _emit_images(rng, "train_", spec.images, split.seen_ids, spec, means)
    test_records = _emit_images(rng, "test_", spec.images, split.foreground_ids, spec, means)

    proposal_records = []
    per_image: dict[str, list[tuple[str, Box, int, np.ndarray]]] = {}
    for rec in test_records:
        per_image.setdefault(rec[0], []).append(rec)
    for image_id, recs in per_image.items():
        for _, box, cid, feat in recs:
            for _ in range(PROPOSALS_PER_OBJECT):
                pbox = _jitter_box(box, spec.proposal_jitter, rng)
                pfeat = feat + PROPOSAL_FEATURE_NOISE * rng.standard_normal(spec.D)
                proposal_records.append((image_id, pbox, cid, pfeat))
        n_obj_props = len(recs) * PROPOSALS_PER_OBJECT
        rate = spec.background_rate
        n_bg = int(round(n_obj_props * rate / (1.0 - rate))) if rate > 0 else 0
        for _ in range(n_bg):
            bfeat = BACKGROUND_SIGMA * rng.standard_normal(spec.D)
            proposal_records.append((image_id, _random_box(rng), background_id, bfeat))

    train_seen = FeatureSet.from_records(spec.D, train_records)
    test_all = FeatureSet.from_records(spec.D, test_records)
    proposals_test = FeatureSet.from_records(spec.D, proposal_records)
    return table, split, train_seen, test_all, proposals_test


def sample_background_features(
    n: int, feature_dim: int, background_id: int, seed: int
) -> FeatureSet:
    """Draw background training features from the benchmark's background cluster."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = np.random.default_rng([seed, 0xB6])
    records = [
        (f"bg_{i:05d}", FULL_FRAME, background_id, BACKGROUND_SIGMA * rng.standard_normal(feature_dim))
        for i in range(n)
    ]
    return FeatureSet.from_records(feature_dim, records)
