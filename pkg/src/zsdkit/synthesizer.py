"""Semantics-conditioned WGAN feature synthesizer.

Generator G(z, p) and critic Q(f, p) are one-hidden-layer networks over the
concatenated inputs (the critic's class conditioning is realized by
concatenating the class semantic vector). The critic minimizes the
gradient-penalized Wasserstein loss; the generator minimizes a weighted sum
of the adversarial term, a seen-classifier cross-entropy, the negated
mode-seeking ratio, a cycle-consistency reconstruction error through the
frozen visual-semantic mapper, and a triplet hinge with per-class-pair
margins mined online from the generated batch.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import FULL_FRAME, FeatureSet, RunConfig, SemanticTable, SplitSpec
from .errors import ValidationError
from .head import ClassifierHead
from .mapper import Mapper
from .semantics import MarginMatrix

_NOISE_EPS = 1e-8
# Placed under square roots so autograd stays finite at zero distance/gradient;
# far below every test tolerance.
_SQRT_EPS = 1e-12


class Generator(nn.Module):
    def __init__(self, z_dim: int, semantic_dim: int, hidden: int, feature_dim: int):
        super().__init__()
        self.z_dim = z_dim
        self.semantic_dim = semantic_dim
        self.feature_dim = feature_dim
        self.fc1 = nn.Linear(z_dim + semantic_dim, hidden, dtype=torch.float64)
        self.fc2 = nn.Linear(hidden, feature_dim, dtype=torch.float64)

    def forward(self, z: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
        x = torch.cat([z, p], dim=-1)
        return self.fc2(torch.nn.functional.leaky_relu(self.fc1(x), 0.2))


class Critic(nn.Module):
    def __init__(self, feature_dim: int, semantic_dim: int, hidden: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.semantic_dim = semantic_dim
        self.fc1 = nn.Linear(feature_dim + semantic_dim, hidden, dtype=torch.float64)
        self.fc2 = nn.Linear(hidden, 1, dtype=torch.float64)

    def forward(self, f: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
        x = torch.cat([f, p], dim=-1)
        return self.fc2(torch.nn.functional.leaky_relu(self.fc1(x), 0.2)).squeeze(-1)


@dataclass
class SynthesizerParams:
    generator: Generator
    critic: Critic
    config: RunConfig
    history: list[dict] = field(default_factory=list)

    @property
    def z_dim(self) -> int:
        return self.generator.z_dim

    @property
    def feature_dim(self) -> int:
        return self.generator.feature_dim

    @property
    def semantic_dim(self) -> int:
        return self.generator.semantic_dim


@dataclass(frozen=True)
class Triplet:
    """Indices into a generated batch: anchor/positive share a class, negative differs."""

    anchor: int
    positive: int
    negative: int
    anchor_class: int
    negative_class: int

    def __post_init__(self) -> None:
        if self.anchor == self.positive:
            raise ValidationError("anchor and positive must be distinct positions")
        if self.anchor_class == self.negative_class:
            raise ValidationError("negative must come from a different class")


def init_synthesizer(
    feature_dim: int, semantic_dim: int, config: RunConfig, seed: int
) -> SynthesizerParams:
    torch.manual_seed(seed)
    z_dim = config.resolved_z_dim(semantic_dim)
    gen = Generator(z_dim, semantic_dim, config.hidden, feature_dim)
    critic = Critic(feature_dim, semantic_dim, config.hidden)
    return SynthesizerParams(gen, critic, config)


def _gen_net(params) -> Generator:
    return params.generator if isinstance(params, SynthesizerParams) else params


def _critic_net(params) -> Critic:
    return params.critic if isinstance(params, SynthesizerParams) else params


def _as_batch(x, dim: int, what: str) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        t = x.to(torch.float64)
    else:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    single = t.ndim == 1
    if single:
        t = t.unsqueeze(0)
    if t.ndim != 2 or t.shape[1] != dim:
        raise ValidationError(f"{what} must have length {dim}, got shape {tuple(t.shape)}")
    return t, single


def generate(params, z, p) -> np.ndarray:
    """Deterministic forward pass G(z, p) for one sample or a batch."""
    gen = _gen_net(params)
    zt, single_z = _as_batch(z, gen.z_dim, "noise vector")
    pt, single_p = _as_batch(p, gen.semantic_dim, "semantic vector")
    if zt.shape[0] != pt.shape[0]:
        raise ValidationError("noise and semantics batch sizes differ")
    with torch.no_grad():
        out = gen(zt, pt).numpy()
    return out[0] if (single_z and single_p) else out


def critic_score(params, f, p):
    """Critic value Q(f, p) for one sample or a batch."""
    critic = _critic_net(params)
    ft, single_f = _as_batch(f, critic.feature_dim, "feature vector")
    pt, single_p = _as_batch(p, critic.semantic_dim, "semantic vector")
    if ft.shape[0] != pt.shape[0]:
        raise ValidationError("feature and semantics batch sizes differ")
    with torch.no_grad():
        out = critic(ft, pt).numpy()
    return float(out[0]) if (single_f and single_p) else out


def sample_noise(n: int, z_dim: int, seed: int) -> torch.Tensor:
    """n i.i.d. standard-normal noise vectors, deterministic per seed."""
    if n < 0 or z_dim <= 0:
        raise ValidationError("noise dims must be positive (n may be 0)")
    rng = torch.Generator().manual_seed(seed)
    return torch.randn((n, z_dim), generator=rng, dtype=torch.float64)


def gradient_penalty(params, f_real, f_fake, p, rho) -> torch.Tensor:
    """Two-sided penalty ((||grad_{f_hat} Q(f_hat, p)||_2 - 1)^2) at f_hat = rho*f + (1-rho)*f_fake.

    rho may be a scalar or a per-sample column; batches average the per-sample
    penalties.
    """
    critic = _critic_net(params)
    real, _ = _as_batch(f_real, critic.feature_dim, "real feature")
    fake, _ = _as_batch(f_fake, critic.feature_dim, "fake feature")
    pt, _ = _as_batch(p, critic.semantic_dim, "semantic vector")
    if not (real.shape[0] == fake.shape[0] == pt.shape[0]):
        raise ValidationError("gradient penalty batch sizes differ")
    if isinstance(rho, torch.Tensor):
        rho_t = rho.to(torch.float64).reshape(-1, 1)
    else:
        rho_t = torch.full((real.shape[0], 1), float(rho), dtype=torch.float64)
    interp = (rho_t * real + (1.0 - rho_t) * fake).detach().requires_grad_(True)
    scores = critic(interp, pt)
    grads = torch.autograd.grad(scores.sum(), interp, create_graph=True)[0]
    norms = torch.sqrt((grads**2).sum(dim=1) + _SQRT_EPS)
    return ((norms - 1.0) ** 2).mean()


def _wgan_critic_terms(critic, real, fake, p, gp_lambda, rho):
    q_real = critic(real, p)
    q_fake = critic(fake, p)
    penalty = gradient_penalty(critic, real, fake, p, rho)
    loss = q_fake.mean() - q_real.mean() + gp_lambda * penalty
    gap = q_real.mean() - q_fake.mean()
    return loss, gap


def loss_wgan_critic(params, f_real, f_fake, p, gp_lambda: float, rho) -> torch.Tensor:
    """The quantity the critic minimizes: E[Q(fake)] - E[Q(real)] + lambda * penalty."""
    critic = _critic_net(params)
    real, _ = _as_batch(f_real, critic.feature_dim, "real feature")
    fake, _ = _as_batch(f_fake, critic.feature_dim, "fake feature")
    pt, _ = _as_batch(p, critic.semantic_dim, "semantic vector")
    if real.shape[0] == 0:
        raise ValidationError("empty batch")
    loss, _ = _wgan_critic_terms(critic, real, fake, pt, gp_lambda, rho)
    return loss


def loss_wgan_generator(params, f_fake, p) -> torch.Tensor:
    """Adversarial generator term -E[Q(fake, p)] (no penalty on this side)."""
    critic = _critic_net(params)
    fake, _ = _as_batch(f_fake, critic.feature_dim, "fake feature")
    pt, _ = _as_batch(p, critic.semantic_dim, "semantic vector")
    if fake.shape[0] == 0:
        raise ValidationError("empty batch")
    return -critic(fake, pt).mean()


def loss_cls(classifier: ClassifierHead, f_fake, labels) -> torch.Tensor:
    """Mean negative log of the true-class softmax probability under a fixed head."""
    fake, _ = _as_batch(f_fake, classifier.feature_dim, "fake feature")
    if fake.shape[0] == 0:
        raise ValidationError("empty batch")
    rows = torch.tensor([classifier.row(int(c)) for c in labels], dtype=torch.long)
    if rows.shape[0] != fake.shape[0]:
        raise ValidationError("labels/batch length mismatch")
    return torch.nn.functional.cross_entropy(classifier.logits(fake), rows)


def _ms_ratio(f1: torch.Tensor, f2: torch.Tensor, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    z_gap = (z1 - z2).abs().sum(dim=1)
    if bool((z_gap <= _NOISE_EPS).any()):
        raise ValidationError("degenerate noise pair")
    return ((f1 - f2).abs().sum(dim=1) / z_gap).mean()


def loss_ms(params, z1, z2, p) -> torch.Tensor:
    """Mode-seeking diversity ratio E[ ||G(z1,p)-G(z2,p)||_1 / ||z1-z2||_1 ].

    The trainer maximizes this (the generator objective adds its negation).
    """
    gen = _gen_net(params)
    z1t, _ = _as_batch(z1, gen.z_dim, "noise vector")
    z2t, _ = _as_batch(z2, gen.z_dim, "noise vector")
    pt, _ = _as_batch(p, gen.semantic_dim, "semantic vector")
    return _ms_ratio(gen(z1t, pt), gen(z2t, pt), z1t, z2t)


def mine_triplets(labels) -> list[Triplet]:
    """All (anchor, positive, negative) index triples, lexicographically ordered."""
    labels = [int(c) for c in labels]
    n = len(labels)
    triplets = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for neg in range(n):
                if labels[neg] != labels[a]:
                    triplets.append(Triplet(a, p, neg, labels[a], labels[neg]))
    return triplets


def loss_triplet(features, triplets: list[Triplet], mm: MarginMatrix) -> torch.Tensor:
    """Mean hinge max(0, d(a,p) - d(a,n) + margin(class_a, class_n)) over triplets."""
    if isinstance(features, torch.Tensor):
        feats = features.to(torch.float64)
    else:
        feats = torch.as_tensor(np.asarray(features, dtype=np.float64))
    if not triplets:
        return torch.zeros((), dtype=torch.float64)
    a = torch.tensor([t.anchor for t in triplets], dtype=torch.long)
    p = torch.tensor([t.positive for t in triplets], dtype=torch.long)
    n = torch.tensor([t.negative for t in triplets], dtype=torch.long)
    margins = torch.tensor(
        [mm.margin(t.anchor_class, t.negative_class) for t in triplets], dtype=torch.float64
    )
    d_ap = torch.sqrt(((feats[a] - feats[p]) ** 2).sum(dim=1) + _SQRT_EPS)
    d_an = torch.sqrt(((feats[a] - feats[n]) ** 2).sum(dim=1) + _SQRT_EPS)
    return torch.relu(d_ap - d_an + margins).mean()


def _triplet_loss_batch_all(
    feats: torch.Tensor, label_rows: torch.Tensor, margin_values: torch.Tensor
) -> torch.Tensor:
    """Vectorized batch-all triplet hinge; equals loss_triplet over mine_triplets.

    Hinges are materialized per valid (anchor, positive) pair rather than over
    the full n^3 cube; selection order stays lexicographic in (a, p, n).
    """
    n = feats.shape[0]
    diff = feats.unsqueeze(1) - feats.unsqueeze(0)
    dists = torch.sqrt((diff**2).sum(dim=-1) + _SQRT_EPS)
    same = label_rows.unsqueeze(1) == label_rows.unsqueeze(0)
    pos_mask = same & ~torch.eye(n, dtype=torch.bool)
    ap = pos_mask.nonzero()  # (A, 2) in row-major (a, p) order
    if ap.shape[0] == 0:
        return torch.zeros((), dtype=torch.float64)
    anchors = ap[:, 0]
    neg_mask = ~same[anchors]  # (A, n), row n-order matches triplet order
    if not bool(neg_mask.any()):
        return torch.zeros((), dtype=torch.float64)
    d_ap = dists[anchors, ap[:, 1]].unsqueeze(1)
    d_an = dists[anchors]
    margins = margin_values[label_rows[anchors]][:, label_rows]
    hinge = torch.relu(d_ap - d_an + margins)
    return hinge[neg_mask].mean()


def _cycon_from_features(mapper: Mapper, feats: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    return ((p - mapper(feats)) ** 2).sum(dim=1).mean()


def loss_cycon(mapper: Mapper, params, z, p) -> torch.Tensor:
    """Mean squared semantic reconstruction error ||p - M(G(z, p))||^2 over the batch.

    The batch may mix seen and unseen semantics; passing equal counts of each
    realizes equal weighting of the two population terms.
    """
    gen = _gen_net(params)
    zt, _ = _as_batch(z, gen.z_dim, "noise vector")
    pt, _ = _as_batch(p, gen.semantic_dim, "semantic vector")
    if zt.shape[0] == 0:
        raise ValidationError("empty batch")
    return _cycon_from_features(mapper, gen(zt, pt), pt)


def _derived_seed(seed: int, tag: int) -> int:
    return (seed * 1_000_003 + tag) % (2**62)


def _probe_accuracy(
    gen: Generator,
    seen_matrix: torch.Tensor,
    val_feats: torch.Tensor,
    val_rows: torch.Tensor,
    seed: int,
    n_per_class: int = 25,
    steps: int = 40,
) -> float:
    """Epoch-selection proxy: a softmax probe trained on synthesized seen
    features and scored on held-out real features."""
    rng = torch.Generator().manual_seed(seed)
    k = seen_matrix.shape[0]
    xs, ys = [], []
    with torch.no_grad():
        for i in range(k):
            z = torch.randn((n_per_class, gen.z_dim), generator=rng, dtype=torch.float64)
            xs.append(gen(z, seen_matrix[i].expand(n_per_class, -1)))
            ys.append(torch.full((n_per_class,), i, dtype=torch.long))
    x = torch.cat(xs)
    y = torch.cat(ys)
    w = torch.zeros((k, x.shape[1]), dtype=torch.float64, requires_grad=True)
    b = torch.zeros(k, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([w, b], lr=0.1)
    for _ in range(steps):
        loss = torch.nn.functional.cross_entropy(x @ w.T + b, y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        pred = (val_feats @ w.T + b).argmax(dim=1)
    return float((pred == val_rows).double().mean())


def train_synthesizer(
    train_seen: FeatureSet,
    table: SemanticTable,
    split: SplitSpec,
    mm: MarginMatrix,
    mapper: Mapper,
    seen_classifier: ClassifierHead,
    config: RunConfig,
    seed: int,
) -> SynthesizerParams:
    """Alternating WGAN-GP optimization with the four generator-side regularizers.

    Per minibatch: `critic_steps` critic updates, then one generator update on
    alpha1 * adversarial + alpha2 * classification + alpha3 * (-mode_seeking)
    + alpha4 * cycle_consistency + alpha5 * triplet. Triplets are mined online
    from the generated batch (optionally extended with unseen-conditioned
    features); unseen semantics always enter the cycle-consistency term.
    Deterministic given the seed; epochs=0 returns the seeded initialization.
    """
    if len(train_seen) == 0:
        raise ValidationError("empty training set")
    seen_set = set(split.seen_ids)
    bad = [int(c) for c in np.unique(train_seen.labels) if int(c) not in seen_set]
    if bad:
        raise ValidationError(f"training features contain non-seen labels {bad}")
    if not table.covers(split):
        raise ValidationError("semantic table does not cover the split")
    if mapper.feature_dim != train_seen.dim or mapper.semantic_dim != table.dim:
        raise ValidationError("mapper dimensions do not match the data")

    params = init_synthesizer(train_seen.dim, table.dim, config, seed)
    if config.epochs == 0:
        return params
    gen, critic = params.generator, params.critic

    mapper_net = copy.deepcopy(mapper)
    mapper_net.requires_grad_(False)

    features = torch.as_tensor(train_seen.features)
    labels = train_seen.labels
    p_all = torch.as_tensor(np.stack([table.vector(int(c)) for c in labels]))
    unseen_matrix = torch.as_tensor(table.matrix(split.unseen_ids))
    seen_matrix = torch.as_tensor(table.matrix(split.seen_ids))

    mm_row = {c: i for i, c in enumerate(mm.class_ids)}
    try:
        label_rows = torch.tensor([mm_row[int(c)] for c in labels], dtype=torch.long)
        unseen_rows = torch.tensor([mm_row[c] for c in split.unseen_ids], dtype=torch.long)
    except KeyError as exc:
        raise ValidationError(f"margin matrix does not cover class {exc.args[0]}") from None
    margin_values = torch.as_tensor(mm.values)

    noise_rng = torch.Generator().manual_seed(_derived_seed(seed, 1))
    shuffle_rng = torch.Generator().manual_seed(_derived_seed(seed, 2))
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_q = torch.optim.Adam(critic.parameters(), lr=config.lr, betas=(0.5, 0.999))

    use_unseen_extras = config.alpha4 > 0 or (
        config.alpha5 > 0 and config.triplets_include_unseen
    )
    n = len(train_seen)
    val_rows = None
    if config.select_best_epoch:
        # Hold out every fifth record (after a seeded shuffle) for epoch selection.
        vperm = torch.randperm(n, generator=torch.Generator().manual_seed(_derived_seed(seed, 3)))
        val_idx = vperm[::5]
        train_idx = torch.tensor(sorted(set(range(n)) - set(val_idx.tolist())), dtype=torch.long)
        seen_row_of = {c: i for i, c in enumerate(split.seen_ids)}
        val_rows = torch.tensor([seen_row_of[int(labels[i])] for i in val_idx], dtype=torch.long)
        val_feats = features[val_idx]
    else:
        train_idx = torch.arange(n)

    best_acc, best_state = -1.0, None
    for epoch in range(1, config.epochs + 1):
        sums = {k: 0.0 for k in ("L_wgan_c", "L_wgan_g", "L_cls", "L_ms", "L_cycon", "L_triplet", "w_gap")}
        critic_iters = 0
        gen_iters = 0
        last_gap = 0.0
        perm = train_idx[torch.randperm(len(train_idx), generator=shuffle_rng)]
        for start in range(0, len(perm), config.batch):
            idx = perm[start : start + config.batch]
            nb = len(idx)
            if nb < 2:
                continue
            real = features[idx]
            p = p_all[idx]
            y = labels[idx.numpy()]
            y_rows = label_rows[idx]

            for _ in range(config.critic_steps):
                z = torch.randn((nb, gen.z_dim), generator=noise_rng, dtype=torch.float64)
                rho = torch.rand((nb, 1), generator=noise_rng, dtype=torch.float64)
                with torch.no_grad():
                    fake = gen(z, p)
                c_loss, gap = _wgan_critic_terms(critic, real, fake, p, config.gp_lambda, rho)
                opt_q.zero_grad()
                c_loss.backward()
                opt_q.step()
                sums["L_wgan_c"] += c_loss.item()
                sums["w_gap"] += gap.item()
                last_gap = gap.item()
                critic_iters += 1

            z1 = torch.randn((nb, gen.z_dim), generator=noise_rng, dtype=torch.float64)
            fake1 = gen(z1, p)
            g_adv = -critic(fake1, p).mean()
            g_loss = config.alpha1 * g_adv
            sums["L_wgan_g"] += g_adv.item()

            if config.alpha2 > 0:
                cls = loss_cls(seen_classifier, fake1, y)
                g_loss = g_loss + config.alpha2 * cls
                sums["L_cls"] += cls.item()

            if config.alpha3 > 0:
                z2 = torch.randn((nb, gen.z_dim), generator=noise_rng, dtype=torch.float64)
                ms = _ms_ratio(fake1, gen(z2, p), z1, z2)
                g_loss = g_loss - config.alpha3 * ms
                sums["L_ms"] += ms.item()

            fake_u = None
            if use_unseen_extras:
                u_pick = torch.randint(len(split.unseen_ids), (nb,), generator=noise_rng)
                zu = torch.randn((nb, gen.z_dim), generator=noise_rng, dtype=torch.float64)
                pu = unseen_matrix[u_pick]
                fake_u = gen(zu, pu)

            if config.alpha4 > 0:
                cycon = 0.5 * (
                    _cycon_from_features(mapper_net, fake1, p)
                    + _cycon_from_features(mapper_net, fake_u, pu)
                )
                g_loss = g_loss + config.alpha4 * cycon
                sums["L_cycon"] += cycon.item()

            if config.alpha5 > 0:
                if config.triplets_include_unseen and fake_u is not None:
                    pool = torch.cat([fake1, fake_u])
                    pool_rows = torch.cat([y_rows, unseen_rows[u_pick]])
                else:
                    pool = fake1
                    pool_rows = y_rows
                trip = _triplet_loss_batch_all(pool, pool_rows, margin_values)
                g_loss = g_loss + config.alpha5 * trip
                sums["L_triplet"] += trip.item()

            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            gen_iters += 1

        entry = {"epoch": epoch}
        for key in ("L_wgan_c", "w_gap"):
            entry[key] = sums[key] / max(critic_iters, 1)
        # The critic's current gap estimate at epoch end; unlike the epoch mean
        # it is not diluted by the cold-start critic in epoch 1.
        entry["w_gap_end"] = last_gap
        for key in ("L_wgan_g", "L_cls", "L_ms", "L_cycon", "L_triplet"):
            entry[key] = sums[key] / max(gen_iters, 1)
        if config.select_best_epoch:
            acc = _probe_accuracy(
                gen, seen_matrix, val_feats, val_rows, _derived_seed(seed, 1000 + epoch)
            )
            entry["val_acc"] = acc
            if acc > best_acc:
                best_acc = acc
                best_state = (
                    copy.deepcopy(gen.state_dict()),
                    copy.deepcopy(critic.state_dict()),
                    epoch,
                )
        params.history.append(entry)

    if config.select_best_epoch and best_state is not None:
        gen.load_state_dict(best_state[0])
        critic.load_state_dict(best_state[1])
        params.history.append({"epoch": best_state[2], "selected": 1.0})
    return params


def synthesize(
    params: SynthesizerParams,
    table: SemanticTable,
    class_ids,
    n_per_class: int,
    seed: int,
) -> FeatureSet:
    """Generate n_per_class features per class, labelled, with a sentinel full-frame box."""
    if n_per_class < 0:
        raise ValidationError("n_per_class must be non-negative")
    gen = params.generator
    if table.dim != gen.semantic_dim:
        raise ValidationError("semantic table dim does not match the generator")
    rng = torch.Generator().manual_seed(seed)
    records = []
    for cid in class_ids:
        cid = int(cid)
        p_vec = torch.as_tensor(table.vector(cid))
        if n_per_class == 0:
            continue
        z = torch.randn((n_per_class, gen.z_dim), generator=rng, dtype=torch.float64)
        with torch.no_grad():
            feats = gen(z, p_vec.expand(n_per_class, -1)).numpy()
        for i in range(n_per_class):
            records.append((f"synth_{cid:03d}_{i:05d}", FULL_FRAME, cid, feats[i]))
    return FeatureSet.from_records(gen.feature_dim, records)


def save_synthesizer(params: SynthesizerParams, path: str | Path) -> None:
    gen, critic = params.generator, params.critic
    meta = {
        "feature_dim": gen.feature_dim,
        "semantic_dim": gen.semantic_dim,
        "z_dim": gen.z_dim,
        "hidden": gen.fc1.out_features,
        "epochs_trained": sum(1 for h in params.history if "selected" not in h),
        "config": params.config.to_dict(),
    }
    state = {f"generator.{k}": v for k, v in gen.state_dict().items()}
    state.update({f"critic.{k}": v for k, v in critic.state_dict().items()})
    save_checkpoint(path, "synthesizer", meta, state)


def load_synthesizer(path: str | Path) -> SynthesizerParams:
    meta, state = load_checkpoint(path, "synthesizer")
    config = RunConfig.from_mapping(meta["config"])
    gen = Generator(meta["z_dim"], meta["semantic_dim"], meta["hidden"], meta["feature_dim"])
    critic = Critic(meta["feature_dim"], meta["semantic_dim"], meta["hidden"])
    gen.load_state_dict({k[len("generator.") :]: v for k, v in state.items() if k.startswith("generator.")})
    critic.load_state_dict({k[len("critic.") :]: v for k, v in state.items() if k.startswith("critic.")})
    return SynthesizerParams(gen, critic, config)


def write_loss_log(history: list[dict], path: str | Path) -> None:
    columns = ["epoch", "L_wgan_c", "L_wgan_g", "L_cls", "L_ms", "L_cycon", "L_triplet"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for entry in history:
            if "selected" in entry:
                continue
            writer.writerow([entry["epoch"]] + [str(float(entry[c])) for c in columns[1:]])
