"""End-to-end orchestration: train, generate, assemble, detect, evaluate, ablate.

These functions operate on in-memory objects; the CLI layers file IO and
manifests on top. The ablation harness reruns the whole pipeline per loss
mask and seed and reports unseen mAP, the engineered-pair confusion rate,
and the cycle-consistency error on held-out generated unseen features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import head as head_mod
from . import mapper as mapper_mod
from . import synthesizer as synth_mod
from .dataio import BenchSpec, FeatureSet, RunConfig, SemanticTable, SplitSpec
from .dataio import find_similar_pairs, generate_benchmark, sample_background_features
from .errors import ValidationError
from .evaluation import Detection, EvalReport, evaluate, nms
from .semantics import MarginMatrix, margin_matrix
from .synthesizer import SynthesizerParams, _derived_seed

LOSS_TERMS = ("WGAN", "MS", "CLS", "CYCON", "TRIPLET")
_TERM_TO_ALPHA = {"WGAN": "alpha1", "CLS": "alpha2", "MS": "alpha3", "CYCON": "alpha4", "TRIPLET": "alpha5"}


@dataclass
class DataBundle:
    """Everything a pipeline run consumes."""

    table: SemanticTable
    split: SplitSpec
    train_seen: FeatureSet
    train_bg: FeatureSet
    test_all: FeatureSet
    proposals: FeatureSet


@dataclass
class TrainedArtifacts:
    margins: MarginMatrix
    mapper: mapper_mod.Mapper
    seen_head: head_mod.ClassifierHead
    synth: SynthesizerParams


@dataclass
class RunResult:
    mask: str
    seed: int
    unseen_map: float
    confusion_rate: float
    cycon_holdout: float
    report: EvalReport | None = field(repr=False, default=None)


def make_benchmark_bundle(spec: BenchSpec) -> DataBundle:
    """Generate the synthetic benchmark plus a matching background training set."""
    table, split, train_seen, test_all, proposals = generate_benchmark(spec)
    rate = spec.background_rate
    n_bg = int(round(len(train_seen) * rate / (1.0 - rate))) if rate > 0 else 0
    train_bg = sample_background_features(n_bg, spec.D, split.background_id, spec.seed)
    return DataBundle(table, split, train_seen, train_bg, test_all, proposals)


def parse_mask(mask: str) -> frozenset[str]:
    """Parse 'all', 'no-TERM', or an explicit comma list of enabled loss terms."""
    text = mask.strip()
    if text.lower() == "all":
        terms = set(LOSS_TERMS)
    elif text.lower().startswith("no-"):
        drop = text[3:].upper()
        if drop not in LOSS_TERMS:
            raise ValidationError(f"unknown loss term {drop!r} in mask {mask!r}")
        terms = set(LOSS_TERMS) - {drop}
    else:
        terms = {t.strip().upper() for t in text.split(",") if t.strip()}
        unknown = terms - set(LOSS_TERMS)
        if unknown:
            raise ValidationError(f"unknown loss terms {sorted(unknown)} in mask {mask!r}")
    if "WGAN" not in terms:
        raise ValidationError("the WGAN term cannot be disabled")
    return frozenset(terms)


def apply_mask(config: RunConfig, terms: frozenset[str]) -> RunConfig:
    updates = {alpha: 0.0 for term, alpha in _TERM_TO_ALPHA.items() if term not in terms}
    return config.replace(**updates) if updates else config


def train_pipeline(data: DataBundle, config: RunConfig, seed: int) -> TrainedArtifacts:
    """Margin matrix, mapper, seen classifier, then the WGAN synthesizer."""
    mm = margin_matrix(data.table, config.shrinkage, (config.margin_low, config.margin_high))
    mapper = mapper_mod.train_mapper(
        data.train_seen,
        data.table,
        data.split,
        config.mapper_epochs,
        config.mapper_lr,
        seed,
        hidden=config.resolved_mapper_hidden(data.table.dim),
    )
    seen_train = data.train_seen.concat(data.train_bg) if len(data.train_bg) else data.train_seen
    seen_head = head_mod.train_classifier(
        seen_train,
        list(data.split.seen_ids) + [data.split.background_id],
        config.head_epochs,
        config.head_lr,
        seed,
    )
    synth = synth_mod.train_synthesizer(
        data.train_seen, data.table, data.split, mm, mapper, seen_head, config, seed
    )
    return TrainedArtifacts(mm, mapper, seen_head, synth)


def build_full_head(
    synth: SynthesizerParams,
    seen_head: head_mod.ClassifierHead,
    table: SemanticTable,
    split: SplitSpec,
    config: RunConfig,
    seed: int,
    n_per_class: int | None = None,
    calibrate: bool = False,
    calib_features: FeatureSet | None = None,
) -> head_mod.ClassifierHead:
    """Synthesize unseen features, train the unseen head, and assemble S+U+1 rows.

    With calibrate=True the unseen-logit offset is fit on held-out synthesized
    features of both seen and unseen classes (never the ones the unseen head
    trained on).
    """
    n = config.n_per_class if n_per_class is None else n_per_class
    gen_feats = synth_mod.synthesize(synth, table, split.unseen_ids, n, _derived_seed(seed, 77))
    unseen_head = head_mod.train_classifier(
        gen_feats, list(split.unseen_ids), config.head_epochs, config.head_lr,
        _derived_seed(seed, 88),
    )
    offset = config.calibration
    if calibrate:
        holdout = calib_features
        if holdout is None:
            holdout = synth_mod.synthesize(
                synth,
                table,
                list(split.seen_ids) + list(split.unseen_ids),
                max(n // 4, 20),
                _derived_seed(seed, 99),
            )
        offset = head_mod.fit_calibration(seen_head, unseen_head, split, holdout)
    return head_mod.assemble_head(seen_head, unseen_head, split, offset)


def detections_from_proposals(
    full_head: head_mod.ClassifierHead,
    proposals: FeatureSet,
    split: SplitSpec,
    nms_threshold: float = 0.7,
    score_floor: float = 0.0,
) -> list[Detection]:
    """Score every proposal for every foreground class, then per-class greedy NMS."""
    if len(proposals) == 0:
        return []
    probs = head_mod.classify(full_head, proposals.features)
    groups: dict[tuple[str, int], list[Detection]] = {}
    for cid in split.foreground_ids:
        col = full_head.row(cid)
        for i in range(len(proposals)):
            score = float(probs[i, col])
            if score <= score_floor:
                continue
            det = Detection(proposals.image_ids[i], proposals.boxes[i], cid, score)
            groups.setdefault((proposals.image_ids[i], cid), []).append(det)
    out: list[Detection] = []
    for key in sorted(groups):
        out.extend(nms(groups[key], nms_threshold))
    return out


def evaluate_head(
    full_head: head_mod.ClassifierHead,
    proposals: FeatureSet,
    test_all: FeatureSet,
    split: SplitSpec,
    config: RunConfig,
    mode: str = "both",
    recall_pool: str = "image",
) -> EvalReport:
    dets = detections_from_proposals(
        full_head, proposals, split, config.nms_threshold, config.score_floor
    )
    return evaluate(
        dets, test_all, split, mode, config.iou_threshold, config.recall_k, recall_pool
    )


def confusion_rate(
    full_head: head_mod.ClassifierHead,
    data: DataBundle,
    pairs: list[tuple[int, int]] | None = None,
) -> float:
    """Fraction of engineered unseen-class test features argmax-assigned to the paired seen class."""
    if pairs is None:
        pairs = find_similar_pairs(data.table, data.split)
    if not pairs:
        raise ValidationError("benchmark has no engineered similar pairs")
    rates = []
    for unseen_cid, seen_cid in pairs:
        feats = data.test_all.features[data.test_all.labels == unseen_cid]
        if feats.shape[0] == 0:
            continue
        pred = head_mod.argmax_labels(full_head, feats, exclude=[data.split.background_id])
        rates.append(float((pred == seen_cid).mean()))
    if not rates:
        raise ValidationError("no test features for the engineered unseen classes")
    return float(np.mean(rates))


def cycon_holdout(
    artifacts: TrainedArtifacts,
    data: DataBundle,
    seed: int,
    n_per_class: int = 100,
) -> float:
    """Mean cycle-consistency error of freshly generated unseen features."""
    gen = artifacts.synth.generator
    rng = torch.Generator().manual_seed(_derived_seed(seed, 55))
    totals = []
    for cid in data.split.unseen_ids:
        p = torch.as_tensor(data.table.vector(cid)).expand(n_per_class, -1)
        z = torch.randn((n_per_class, gen.z_dim), generator=rng, dtype=torch.float64)
        with torch.no_grad():
            loss = synth_mod.loss_cycon(artifacts.mapper, artifacts.synth, z, p)
        totals.append(float(loss))
    return float(np.mean(totals))


def run_full(data: DataBundle, config: RunConfig, seed: int, mask: str = "all") -> RunResult:
    """One complete pipeline run under a loss mask; reports the ablation metrics."""
    terms = parse_mask(mask)
    cfg = apply_mask(config, terms)
    artifacts = train_pipeline(data, cfg, seed)
    full_head = build_full_head(
        artifacts.synth, artifacts.seen_head, data.table, data.split, cfg, seed
    )
    report = evaluate_head(full_head, data.proposals, data.test_all, data.split, cfg, mode="both")
    conf = confusion_rate(full_head, data)
    cyc = cycon_holdout(artifacts, data, seed)
    return RunResult(mask, seed, report.map_zsd, conf, cyc, report)


def ablate(
    data: DataBundle, config: RunConfig, masks: list[str], seeds: list[int]
) -> tuple[list[RunResult], list[dict]]:
    """Run every mask x seed combination and aggregate mean/sd per mask."""
    if not masks or not seeds:
        raise ValidationError("need at least one mask and one seed")
    for m in masks:
        parse_mask(m)  # validate up front, including the WGAN-always-on rule
    results = [run_full(data, config, seed, mask) for mask in masks for seed in seeds]
    aggregates = []
    for mask in masks:
        runs = [r for r in results if r.mask == mask]
        for stat, fn in (("mean", np.mean), ("sd", lambda v: np.std(v, ddof=1) if len(v) > 1 else 0.0)):
            aggregates.append(
                {
                    "mask": mask,
                    "seed": stat,
                    "unseen_map": float(fn([r.unseen_map for r in runs])),
                    "confusion_rate": float(fn([r.confusion_rate for r in runs])),
                    "cycon_holdout": float(fn([r.cycon_holdout for r in runs])),
                }
            )
    return results, aggregates


def ablation_rows(results: list[RunResult], aggregates: list[dict]) -> list[list[str]]:
    """Flatten ablation output into CSV rows (header first)."""
    rows = [["mask", "seed", "unseen_map", "confusion_rate", "cycon_holdout"]]
    for r in results:
        rows.append([r.mask, str(r.seed), str(r.unseen_map), str(r.confusion_rate), str(r.cycon_holdout)])
    for a in aggregates:
        rows.append(
            [a["mask"], a["seed"], str(a["unseen_map"]), str(a["confusion_rate"]), str(a["cycon_holdout"])]
        )
    return rows


def generation_sweep(
    synth: SynthesizerParams,
    seen_head: head_mod.ClassifierHead,
    table: SemanticTable,
    split: SplitSpec,
    proposals: FeatureSet,
    test_all: FeatureSet,
    config: RunConfig,
    seed: int,
    counts: list[int],
) -> list[tuple[int, float]]:
    """Unseen mAP as a function of the per-class generation count."""
    if any(c <= 0 for c in counts):
        raise ValidationError("sweep counts must be positive")
    rows = []
    for n in counts:
        full_head = build_full_head(synth, seen_head, table, split, config, seed, n_per_class=n)
        report = evaluate_head(full_head, proposals, test_all, split, config, mode="zsd")
        rows.append((n, report.map_zsd))
    return rows
