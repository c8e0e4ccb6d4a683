"""Independent brute-force implementations used to cross-check the library.

Everything here is deliberately written from scratch with different code
structure than the library paths it validates.
"""

from __future__ import annotations

import itertools

import torch


def oracle_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a.x, a.y, a.x + a.w, a.y + a.h
    bx1, by1, bx2, by2 = b.x, b.y, b.x + b.w, b.y + b.h
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def oracle_nms(dets, threshold):
    """Greedy suppression via repeated max selection over a shrinking pool."""
    remaining = list(range(len(dets)))
    keep = []
    while remaining:
        best = min(remaining, key=lambda i: (-dets[i].score, i))
        keep.append(best)
        remaining = [
            i
            for i in remaining
            if i != best and oracle_iou(dets[best].box, dets[i].box) <= threshold
        ]
    return [dets[i] for i in keep]


def oracle_match(dets, gts, iou_threshold):
    """Greedy score-ordered matching without any grouping structures."""
    tp = [False] * len(dets)
    gt_used = [False] * len(gts)
    for di in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        det = dets[di]
        best_gi, best_iou = -1, 0.0
        for gi, (img, gbox, glabel) in enumerate(gts):
            if gt_used[gi] or img != det.image_id or glabel != det.label:
                continue
            v = oracle_iou(det.box, gbox)
            if v >= iou_threshold and v > best_iou:
                best_gi, best_iou = gi, v
        if best_gi != -1:
            tp[di] = True
            gt_used[best_gi] = True
    return tp, gt_used


def oracle_ap(flags, scores, n_gt):
    """AP as the sum over recall steps of the best precision at or beyond each step."""
    if n_gt == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions, recalls = [], []
    tp = 0
    for rank, i in enumerate(order, start=1):
        tp += bool(flags[i])
        precisions.append(tp / rank)
        recalls.append(tp / n_gt)
    total_tp = tp
    ap = 0.0
    for k in range(1, total_tp + 1):
        step = k / n_gt
        ap += max(p for p, r in zip(precisions, recalls) if r >= step) / n_gt
    return ap


def oracle_mine_triplets(labels):
    """Exhaustive triple enumeration, returned as raw index tuples."""
    labels = list(labels)
    out = []
    for a, p, n in itertools.product(range(len(labels)), repeat=3):
        if a != p and labels[a] == labels[p] and labels[n] != labels[a]:
            out.append((a, p, n, labels[a], labels[n]))
    return out


def finite_difference_grads(loss_fn, tensors, eps=1e-6):
    """Central finite differences of loss_fn() w.r.t. each tensor, in place."""
    grads = []
    for t in tensors:
        g = torch.zeros_like(t)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = float(loss_fn().detach())
            flat[i] = orig - eps
            f_minus = float(loss_fn().detach())
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def gradient_relative_error(analytic, numeric):
    a = torch.cat([g.reshape(-1) for g in analytic])
    n = torch.cat([g.reshape(-1) for g in numeric])
    denom = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / denom


def autograd_params_grads(loss_fn, tensors):
    """Analytic gradients of loss_fn() w.r.t. the given leaf tensors."""
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    return [
        t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        for t in tensors
    ]
