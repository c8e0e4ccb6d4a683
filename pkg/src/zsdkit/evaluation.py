"""Detection evaluation: IoU, greedy NMS, matching, AP/mAP, Recall@K, GZSD report.

Average precision uses continuous all-point integration under the monotone
precision envelope at a single IoU threshold. Recall@K pools the top-K
detections per image across classes. Score ties always break by input order,
which keeps every metric deterministic.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .dataio import Box, FeatureSet, SplitSpec
from .errors import IngestionError, ValidationError


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box
    label: int
    score: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score {self.score} outside [0, 1]")


@dataclass
class EvalReport:
    """Metrics in [0, 1]; fields are None when the mode did not compute them."""

    iou_threshold: float
    per_class_ap: dict[int, float]
    map_zsd: float | None = None
    recall100_zsd: float | None = None
    gzsd_seen_map: float | None = None
    gzsd_unseen_map: float | None = None
    gzsd_hm: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "zsd": None
            if self.map_zsd is None
            else {"map": self.map_zsd, "recall100": self.recall100_zsd},
            "gzsd": None
            if self.gzsd_hm is None
            else {
                "seen": self.gzsd_seen_map,
                "unseen": self.gzsd_unseen_map,
                "hm": self.gzsd_hm,
            },
            "per_class_ap": {str(c): ap for c, ap in sorted(self.per_class_ap.items())},
            "iou_threshold": self.iou_threshold,
        }


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area of two boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


def nms(dets: list[Detection], threshold: float) -> list[Detection]:
    """Greedy suppression for one class on one image.

    Keep the highest-scoring box, drop the rest with IoU strictly above the
    threshold, repeat. Output is ordered by descending score, ties by input
    order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    suppressed = [False] * len(dets)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(dets[i])
        for j in order:
            if not suppressed[j] and j != i and iou(dets[i].box, dets[j].box) > threshold:
                suppressed[j] = True
    return kept


def match_detections(
    dets: list[Detection],
    gts: list[tuple[str, Box, int]],
    iou_threshold: float,
) -> tuple[list[bool], list[bool]]:
    """Greedy TP/FP assignment within each (image, class) group.

    Detections are visited in descending score order (ties by input order) and
    claim the unmatched same-class ground-truth box of highest IoU, provided
    that IoU reaches the threshold. Returns per-detection TP flags aligned with
    `dets` and per-ground-truth matched flags aligned with `gts`.
    """
    gt_groups: dict[tuple[str, int], list[int]] = defaultdict(list)
    for gi, (image_id, _, label) in enumerate(gts):
        gt_groups[(image_id, label)].append(gi)
    tp = [False] * len(dets)
    matched = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for di in order:
        det = dets[di]
        best_iou, best_gi = 0.0, -1
        for gi in gt_groups.get((det.image_id, det.label), ()):
            if matched[gi]:
                continue
            v = iou(det.box, gts[gi][1])
            if v >= iou_threshold and v > best_iou:
                best_iou, best_gi = v, gi
        if best_gi >= 0:
            tp[di] = True
            matched[best_gi] = True
    return tp, matched


def average_precision(tp_flags: list[bool], scores: list[float], n_gt: int) -> float | None:
    """Area under the precision-recall curve with the monotone precision envelope.

    Returns None when n_gt == 0 (class excluded from mAP).
    """
    if len(tp_flags) != len(scores):
        raise ValidationError("flag/score lengths differ")
    if n_gt == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tps = 0
    points: list[tuple[float, float]] = []  # (recall, precision) after each detection
    for rank, i in enumerate(order, start=1):
        tps += int(tp_flags[i])
        points.append((tps / n_gt, tps / rank))
    # Envelope: precision at recall r is the max precision at any recall >= r.
    ap = 0.0
    prev_recall = 0.0
    best = 0.0
    envelope = [0.0] * len(points)
    for i in range(len(points) - 1, -1, -1):
        best = max(best, points[i][1])
        envelope[i] = best
    for (recall, _), env in zip(points, envelope):
        if recall > prev_recall:
            ap += (recall - prev_recall) * env
            prev_recall = recall
    return ap


def recall_at_k(
    dets: list[Detection],
    gts: list[tuple[str, Box, int]],
    k: int = 100,
    iou_threshold: float = 0.5,
    pool: str = "image",
) -> float:
    """Fraction of ground-truth boxes matched by the top-k detections.

    pool="image" keeps the k best-scored detections per image across classes;
    pool="class" keeps k per (image, class) instead.
    """
    if pool not in ("image", "class"):
        raise ValidationError(f"unknown recall pool {pool!r}")
    if not gts:
        raise ValidationError("recall is undefined on an empty ground-truth set")
    groups: dict = defaultdict(list)
    for i, det in enumerate(dets):
        key = det.image_id if pool == "image" else (det.image_id, det.label)
        groups[key].append(i)
    keep: list[int] = []
    for key in groups:
        ranked = sorted(groups[key], key=lambda i: (-dets[i].score, i))
        keep.extend(ranked[:k])
    keep.sort()
    _, matched = match_detections([dets[i] for i in keep], gts, iou_threshold)
    return sum(matched) / len(gts)


def harmonic_mean(s: float, u: float) -> float:
    """2su/(s+u), defined as 0 when s+u is 0."""
    if s + u == 0.0:
        return 0.0
    return 2.0 * s * u / (s + u)


def _gt_tuples(fs: FeatureSet) -> list[tuple[str, Box, int]]:
    return [(img, box, label) for img, box, label, _ in fs.records()]


def _map_over_classes(
    dets: list[Detection],
    gts: list[tuple[str, Box, int]],
    class_ids: tuple[int, ...],
    iou_threshold: float,
) -> tuple[float, dict[int, float]]:
    tp, _ = match_detections(dets, gts, iou_threshold)
    per_class: dict[int, float] = {}
    for cid in class_ids:
        flags = [tp[i] for i, d in enumerate(dets) if d.label == cid]
        scores = [d.score for d in dets if d.label == cid]
        n_gt = sum(1 for g in gts if g[2] == cid)
        ap = average_precision(flags, scores, n_gt)
        if ap is not None:
            per_class[cid] = ap
    mean_ap = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return mean_ap, per_class


def evaluate(
    dets: list[Detection],
    gts: FeatureSet,
    split: SplitSpec,
    mode: str = "gzsd",
    iou_threshold: float = 0.5,
    k: int = 100,
    recall_pool: str = "image",
) -> EvalReport:
    """Score detections against ground truth in ZSD or GZSD mode.

    ZSD restricts both detections and ground truth to unseen classes; GZSD
    scores seen and unseen mAP separately and reports their harmonic mean.
    Background is never scored; detections labelled outside the split raise.
    """
    if mode not in ("zsd", "gzsd", "both"):
        raise ValidationError(f"unknown evaluation mode {mode!r}")
    if len(gts) == 0:
        raise ValidationError("empty ground-truth set")
    foreground = set(split.foreground_ids)
    for det in dets:
        if det.label not in foreground:
            raise ValidationError(f"detection label {det.label} outside the split")
    gt_all = [g for g in _gt_tuples(gts) if g[2] in foreground]
    report = EvalReport(iou_threshold=iou_threshold, per_class_ap={})
    if mode in ("zsd", "both"):
        unseen = set(split.unseen_ids)
        zs_dets = [d for d in dets if d.label in unseen]
        zs_gts = [g for g in gt_all if g[2] in unseen]
        if not zs_gts:
            raise ValidationError("no unseen-class ground truth for zsd evaluation")
        mean_ap, per_class = _map_over_classes(zs_dets, zs_gts, split.unseen_ids, iou_threshold)
        report.map_zsd = mean_ap
        report.recall100_zsd = recall_at_k(zs_dets, zs_gts, k, iou_threshold, recall_pool)
        report.per_class_ap.update(per_class)
    if mode in ("gzsd", "both"):
        seen_map, seen_per_class = _map_over_classes(
            dets, gt_all, split.seen_ids, iou_threshold
        )
        unseen_map, unseen_per_class = _map_over_classes(
            dets, gt_all, split.unseen_ids, iou_threshold
        )
        report.gzsd_seen_map = seen_map
        report.gzsd_unseen_map = unseen_map
        report.gzsd_hm = harmonic_mean(seen_map, unseen_map)
        report.per_class_ap.update(seen_per_class)
        report.per_class_ap.update(unseen_per_class)
    return report


def save_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_detections(dets: list[Detection], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "x", "y", "w", "h", "label", "score"])
        for d in dets:
            writer.writerow(
                [d.image_id, str(d.box.x), str(d.box.y), str(d.box.w), str(d.box.h), d.label, str(d.score)]
            )


def load_detections(path: str | Path) -> list[Detection]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["image_id", "x", "y", "w", "h", "label", "score"]:
        raise IngestionError(f"{path}: expected header image_id,x,y,w,h,label,score")
    dets = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            dets.append(
                Detection(
                    row[0],
                    Box(float(row[1]), float(row[2]), float(row[3]), float(row[4])),
                    int(row[5]),
                    float(row[6]),
                )
            )
        except (ValueError, IndexError):
            raise IngestionError(f"{path}: line {lineno}: malformed detection row") from None
    return dets
