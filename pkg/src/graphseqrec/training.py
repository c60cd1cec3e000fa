"""Multi-task training: next-item prediction plus the two self-supervised
terms (graph-level contrastive alignment and sequence-level contrastive
learning over augmented views), with early stopping on validation quality.

Every random draw comes from a generator keyed on (seed, purpose, epoch,
batch), so toggling one loss term never shifts the randomness feeding the
others, and a fixed seed reproduces a run bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .collab import batch_rows, gce_loss
from .data import (AugmentConfig, ItemSequence, SplitDataset, augment_pair,
                   eligible_negatives, pad_sequence)
from .encoder import user_repr
from .evaluation import MetricsReport, eval_input_sequences, rank_from_scores
from .graph import TransitionGraph, build_transition_graph
from .model import Model, ModelConfig
from .optim import Adam

LAMBDA1_GRID = (0.05, 0.1, 0.2, 0.4)
ENCODER_LAYER_GRID = (1, 2, 3)


@dataclass
class TrainConfig:
    dim: int = 64
    max_len: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gcn_layers: int = 2
    alpha: float = 0.05
    rank: int = 32
    heads: int = 2
    encoder_layers: int = 2
    dropout: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 0.1
    tau: float = 0.2
    max_epochs: int = 1000
    patience: int = 40
    seed: int = 0
    window: int = 2
    degree_mode: str = "weighted"
    crop_ratio: float = 0.6
    mask_ratio: float = 0.3
    reorder_ratio: float = 0.6
    gce_batch_mode: str = "targets"
    exclude_history: bool = True
    enable_agcl: bool = True
    enable_pge: bool = True
    pge_graph: str = "refined"
    literal_layer_avg: bool = True
    fusion_ablation: bool = False

    def validate(self) -> None:
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("learning rate and temperature must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0:
            raise ValueError("loss weights and alpha must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.patience >= self.max_epochs:
            raise ValueError(f"patience ({self.patience}) must be < max_epochs ({self.max_epochs})")
        if self.gce_batch_mode not in ("targets", "unique"):
            raise ValueError(f"gce_batch_mode must be 'targets' or 'unique', got {self.gce_batch_mode!r}")

    def model_config(self, num_items: int, num_users: int) -> ModelConfig:
        return ModelConfig(
            num_items=num_items, num_users=num_users, dim=self.dim,
            max_len=self.max_len, heads=self.heads, encoder_layers=self.encoder_layers,
            dropout=self.dropout, gcn_layers=self.gcn_layers, alpha=self.alpha,
            rank=self.rank, literal_layer_avg=self.literal_layer_avg,
            enable_agcl=self.enable_agcl, enable_pge=self.enable_pge,
            pge_graph=self.pge_graph, fusion_ablation=self.fusion_ablation)


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Ablation variants: 'full', 'no_agcl' (drop the collaborative learner),
    'no_pge' (drop the personalized encoding), 'plain' (drop both)."""
    if variant == "full":
        return replace(cfg)
    if variant == "no_agcl":
        return replace(cfg, enable_agcl=False)
    if variant == "no_pge":
        return replace(cfg, enable_pge=False)
    if variant == "plain":
        return replace(cfg, enable_agcl=False, enable_pge=False)
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def next_item_loss(hidden: Tensor, item_emb: Tensor, targets: np.ndarray,
                   negatives: np.ndarray, step_mask: np.ndarray) -> Tensor:
    """Binary cross-entropy over (positive, sampled negative) logits at every
    real prediction step, summed over the batch.

    ``targets[b, p]`` is the item that follows position p; ``step_mask`` is 1
    where both the position and its successor are real items.
    """
    tgt = ad.gather(item_emb, targets)
    neg = ad.gather(item_emb, negatives)
    pos_logit = ad.sum_axis(ad.mul(hidden, tgt), axis=2)
    neg_logit = ad.sum_axis(ad.mul(hidden, neg), axis=2)
    per_step = ad.add(ad.softplus(ad.neg(pos_logit)), ad.softplus(neg_logit))
    return ad.total_sum(ad.mul(per_step, Tensor(step_mask)))


def seq_cl_loss(view1: Tensor, view2: Tensor, tau: float) -> Tensor:
    """Symmetric in-batch contrastive loss between two view representations.

    Anchors in one view score against all candidates in the other view with
    a cosine critic; the two directions are averaged.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    sims = ad.mul(ad.matmul(ad.unit_rows(view1), ad.transpose(ad.unit_rows(view2))), 1.0 / tau)
    sims_t = ad.transpose(sims)
    fwd = ad.add(ad.total_sum(ad.logsumexp_rows(sims)), ad.neg(ad.total_sum(ad.diagonal(sims))))
    bwd = ad.add(ad.total_sum(ad.logsumexp_rows(sims_t)), ad.neg(ad.total_sum(ad.diagonal(sims_t))))
    return ad.mul(ad.add(fwd, bwd), 0.5)


def total_loss(rec: Tensor, gce: Optional[Tensor] = None, seq: Optional[Tensor] = None,
               lambda1: float = 0.0, lambda2: float = 0.0) -> Tensor:
    """Weighted multi-task objective; disabled terms contribute no graph nodes."""
    out = rec
    if gce is not None and lambda1 != 0.0:
        out = ad.add(out, ad.mul(gce, lambda1))
    if seq is not None and lambda2 != 0.0:
        out = ad.add(out, ad.mul(seq, lambda2))
    return out


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    user_ids: np.ndarray        # (B,)
    seqs: np.ndarray            # (B, N) padded training sequences
    targets: np.ndarray         # (B, N) next item per position (0 where none)
    negatives: np.ndarray       # (B, N) sampled negatives (0 where no step)
    step_mask: np.ndarray       # (B, N) float 1.0 on real prediction steps
    gce_items: np.ndarray       # (B,) items coupling the graph representations
    view1: Optional[np.ndarray] = None
    view2: Optional[np.ndarray] = None


def assemble_batch(users: Sequence, num_items: int, max_len: int,
                   rng_negatives: np.random.Generator,
                   rng_augment: Optional[np.random.Generator],
                   aug_cfg: AugmentConfig,
                   gce_batch_mode: str = "targets") -> Batch:
    n = max_len
    b = len(users)
    seqs = np.zeros((b, n), dtype=np.int64)
    targets = np.zeros((b, n), dtype=np.int64)
    negatives = np.zeros((b, n), dtype=np.int64)
    step_mask = np.zeros((b, n), dtype=np.float64)
    view1 = np.zeros((b, n), dtype=np.int64) if rng_augment is not None else None
    view2 = np.zeros((b, n), dtype=np.int64) if rng_augment is not None else None
    gce_items = np.zeros(b, dtype=np.int64)
    user_ids = np.zeros(b, dtype=np.int64)
    for row, user in enumerate(users):
        user_ids[row] = user.user_id
        items = user.train[-n:]
        seqs[row] = pad_sequence(items, n)
        targets[row, :-1] = seqs[row, 1:]
        valid = (seqs[row] > 0) & (targets[row] > 0)
        step_mask[row] = valid.astype(np.float64)
        pool = eligible_negatives(items, num_items)
        if pool.size == 0:
            raise ValueError(f"user {user.user_id}: no eligible negative item")
        count = int(valid.sum())
        if count:
            negatives[row, valid] = rng_negatives.choice(pool, size=count, replace=True)
        gce_items[row] = items[-1]
        if rng_augment is not None:
            seq = ItemSequence(user.user_id, items)
            v1, v2 = augment_pair(seq, aug_cfg, rng_augment)
            view1[row] = pad_sequence(v1.items, n)
            view2[row] = pad_sequence(v2.items, n)
    if gce_batch_mode == "unique":
        gce_items = np.unique(seqs[seqs > 0])
    return Batch(user_ids, seqs, targets, negatives, step_mask, gce_items, view1, view2)


# ---------------------------------------------------------------------------
# evaluation with the model
# ---------------------------------------------------------------------------

def evaluate_model(model: Model, dataset: SplitDataset, split: str,
                   batch_size: int = 256, exclude_history: bool = True,
                   keep_ranks: bool = False) -> MetricsReport:
    """Full-ranking metrics for one split; deterministic (no dropout)."""
    rows = eval_input_sequences(dataset, split)
    item_emb = model.params["item_emb"].data
    ranks: List[int] = []
    n = model.cfg.max_len
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        seqs = np.stack([pad_sequence(inp, n) for inp, _, _ in chunk])
        user_ids = np.asarray(
            [u.user_id for u in dataset.users[start:start + batch_size]], dtype=np.int64)
        reprs = model.user_reprs(seqs, user_ids).data
        scores = reprs @ item_emb[1:].T
        for i, (_, target, history) in enumerate(chunk):
            ranks.append(rank_from_scores(scores[i], history, target, exclude_history))
    return MetricsReport.from_ranks(ranks, keep_ranks)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    epoch: int = 0
    best_val_ndcg20: float = -1.0
    best_epoch: int = -1
    epochs_since_best: int = 0


@dataclass
class TrainResult:
    state: TrainState
    history: List[str] = field(default_factory=list)
    timing: List[str] = field(default_factory=list)
    model: Optional[Model] = None
    graph: Optional[TransitionGraph] = None
    valid_report: Optional[MetricsReport] = None
    test_report: Optional[MetricsReport] = None
    optimizer: Optional[Adam] = None


def _epoch_rng(seed: int, purpose: int, epoch: int, batch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, epoch, batch])


def train_step(model: Model, batch: Batch, cfg: TrainConfig,
               rng_dropout: Optional[np.random.Generator],
               rng_dropout_views: Optional[np.random.Generator]) -> Dict[str, float]:
    """Forward all enabled loss terms, backprop, and report their values."""
    lambda1 = cfg.lambda1 if cfg.enable_agcl else 0.0
    hidden = model.hidden_states(batch.seqs, batch.user_ids, rng_dropout)
    rec = next_item_loss(hidden, model.params["item_emb"], batch.targets,
                         batch.negatives, batch.step_mask)
    gce = None
    if lambda1 != 0.0:
        reps = model.graph_representations()
        orig_rows, ref_rows = batch_rows(reps, batch.gce_items)
        gce = gce_loss(orig_rows, ref_rows, cfg.tau)
    seq = None
    if cfg.lambda2 != 0.0 and batch.view1 is not None:
        h1 = model.hidden_states(batch.view1, batch.user_ids, rng_dropout_views)
        h2 = model.hidden_states(batch.view2, batch.user_ids, rng_dropout_views)
        z1 = user_repr(h1, batch.view1)
        z2 = user_repr(h2, batch.view2)
        seq = seq_cl_loss(z1, z2, cfg.tau)
    loss = total_loss(rec, gce, seq, lambda1, cfg.lambda2)
    ad.backward(loss)
    return {
        "total": float(loss.data),
        "rec": float(rec.data),
        "gce": float(gce.data) if gce is not None else 0.0,
        "seq": float(seq.data) if seq is not None else 0.0,
    }


def train(cfg: TrainConfig, dataset: SplitDataset,
          graph: Optional[TransitionGraph] = None) -> TrainResult:
    """Run the full optimization with early stopping on validation NDCG@20.

    The transition graph is built from the training portions only (no
    leakage from held-out targets).  The best-validation parameters are
    restored before the final test evaluation.
    """
    cfg.validate()
    train_sequences = [ItemSequence(u.user_id, u.train) for u in dataset.users]
    if graph is None:
        graph = build_transition_graph(train_sequences, cfg.window,
                                       dataset.num_items, cfg.degree_mode)
    rng_init = np.random.default_rng([cfg.seed, 0])
    model = Model(cfg.model_config(dataset.num_items, dataset.num_users), graph, rng_init)
    optimizer = Adam(model.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    aug_cfg = AugmentConfig(cfg.crop_ratio, cfg.mask_ratio, cfg.reorder_ratio)
    state = TrainState()
    result = TrainResult(state, model=model, graph=graph)
    best_snapshot = model.snapshot()
    num_users = len(dataset.users)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        state.epoch = epoch
        order = _epoch_rng(cfg.seed, 1, epoch).permutation(num_users)
        sums = {"total": 0.0, "rec": 0.0, "gce": 0.0, "seq": 0.0}
        for b, start in enumerate(range(0, num_users, cfg.batch_size)):
            users = [dataset.users[i] for i in order[start:start + cfg.batch_size]]
            batch = assemble_batch(
                users, dataset.num_items, cfg.max_len,
                _epoch_rng(cfg.seed, 2, epoch, b),
                _epoch_rng(cfg.seed, 3, epoch, b) if cfg.lambda2 != 0.0 else None,
                aug_cfg, cfg.gce_batch_mode)
            rng_drop = _epoch_rng(cfg.seed, 4, epoch, b) if cfg.dropout > 0 else None
            rng_drop_views = _epoch_rng(cfg.seed, 5, epoch, b) if cfg.dropout > 0 else None
            model.zero_grads()
            values = train_step(model, batch, cfg, rng_drop, rng_drop_views)
            if np.isnan(values["total"]):
                raise RuntimeError(f"NaN loss at epoch {epoch}, batch {b}")
            model.drop_padding_grads()
            optimizer.step()
            for key in sums:
                sums[key] += values[key]
        val = evaluate_model(model, dataset, "valid", cfg.batch_size, cfg.exclude_history)
        line = (f"epoch={epoch} loss_total={sums['total']:.10f} loss_rec={sums['rec']:.10f} "
                f"loss_gce={sums['gce']:.10f} loss_seq={sums['seq']:.10f} "
                + " ".join("val_" + piece for piece in val.lines()))
        result.history.append(line)
        result.timing.append(f"epoch={epoch} seconds={time.perf_counter() - t0:.3f}")
        if val.ndcg[20] > state.best_val_ndcg20:
            state.best_val_ndcg20 = val.ndcg[20]
            state.best_epoch = epoch
            state.epochs_since_best = 0
            best_snapshot = model.snapshot()
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best >= max(cfg.patience, 1):
                break
    model.restore(best_snapshot)
    result.valid_report = evaluate_model(model, dataset, "valid",
                                         cfg.batch_size, cfg.exclude_history)
    result.test_report = evaluate_model(model, dataset, "test",
                                        cfg.batch_size, cfg.exclude_history)
    result.history.append(
        f"best_epoch={state.best_epoch} best_val_ndcg@20={state.best_val_ndcg20:.6f}")
    result.history.append(
        "test " + " ".join(result.test_report.lines()))
    result.optimizer = optimizer
    return result
