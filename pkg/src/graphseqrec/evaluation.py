"""Full-ranking evaluation over the whole item set, plus the embedding
spectrum report used to inspect dimensional collapse.

Ranking is pessimistic about ties: the target loses a tie to any candidate
with a smaller item id, so reported ranks never flatter the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .data import SplitDataset

METRIC_CUTOFFS = (5, 10, 20)


def rank_target(user_vec: np.ndarray, item_emb: np.ndarray, history: Iterable[int],
                target: int, exclude_history: bool = True) -> int:
    """1-based rank of the target among all real items by dot-product score."""
    scores = item_emb[1:] @ np.asarray(user_vec, dtype=np.float64)
    return rank_from_scores(scores, history, target, exclude_history)


def rank_from_scores(scores: np.ndarray, history: Iterable[int], target: int,
                     exclude_history: bool = True) -> int:
    """Rank helper shared by the model scorer and the popularity baseline.

    ``scores[i]`` scores item id i+1.  Ties break by ascending item id, so
    the target is ranked below every equal-scoring smaller id.
    """
    num_items = scores.shape[0]
    candidate = np.ones(num_items, dtype=bool)
    if exclude_history:
        hist = np.asarray([h for h in history if h > 0], dtype=np.int64)
        if hist.size:
            candidate[hist - 1] = False
    if not candidate[target - 1]:
        raise ValueError(f"target item {target} is excluded by the history")
    target_score = scores[target - 1]
    ids = np.arange(1, num_items + 1)
    higher = candidate & (scores > target_score)
    tied_lower = candidate & (scores == target_score) & (ids < target)
    return 1 + int(higher.sum()) + int(tied_lower.sum())


def hr_ndcg(ranks: Sequence[int], k: int) -> tuple:
    """Hit rate and discounted-gain quality at cutoff k."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    hits = ranks <= k
    hr = float(hits.mean())
    gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
    return hr, float(gains.mean())


@dataclass
class MetricsReport:
    hr: Dict[int, float] = field(default_factory=dict)
    ndcg: Dict[int, float] = field(default_factory=dict)
    ranks: Optional[List[int]] = None

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], keep_ranks: bool = False,
                   cutoffs: Sequence[int] = METRIC_CUTOFFS) -> "MetricsReport":
        report = cls()
        for k in cutoffs:
            report.hr[k], report.ndcg[k] = hr_ndcg(ranks, k)
        if keep_ranks:
            report.ranks = list(int(r) for r in ranks)
        return report

    def lines(self) -> List[str]:
        out = []
        for k in sorted(self.hr):
            out.append(f"hr@{k}={self.hr[k]:.6f}")
            out.append(f"ndcg@{k}={self.ndcg[k]:.6f}")
        return out


def eval_input_sequences(dataset: SplitDataset, split: str) -> List[tuple]:
    """(input items, target, history) per user for the requested split.

    Validation predicts the held-out second-to-last item from the training
    prefix; test additionally appends the validation item to the input.
    The target is removed from the history set so it always stays a
    candidate (items can recur in a sequence).
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    rows = []
    for user in dataset.users:
        if split == "valid":
            inp = user.train
            target = user.valid
        else:
            inp = user.train + [user.valid]
            target = user.test
        rows.append((inp, target, set(inp) - {target}))
    return rows


def popularity_ranks(dataset: SplitDataset, split: str,
                     exclude_history: bool = True) -> List[int]:
    """Frequency-ranking baseline on the same splits and tie rules."""
    counts = np.zeros(dataset.num_items, dtype=np.float64)
    for user in dataset.users:
        for item in user.train:
            counts[item - 1] += 1.0
    ranks = []
    for inp, target, history in eval_input_sequences(dataset, split):
        ranks.append(rank_from_scores(counts, history, target, exclude_history))
    return ranks


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    coords: np.ndarray  # (num_items, 2) projection onto top-2 right directions

    def tail_ratio(self, k: int) -> float:
        """sigma_k / sigma_1 (1-based k), the collapse diagnostic."""
        s = self.singular_values
        if s[0] == 0.0:
            return 0.0
        return float(s[min(k, s.size) - 1] / s[0])


def spectrum(embeddings: np.ndarray) -> SpectrumReport:
    """Singular values plus 2D coordinates of every row.

    Rank-deficient inputs simply report trailing zero singular values.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2 or emb.shape[1] < 2:
        raise ValueError(f"spectrum needs at least a 2x2 matrix, got {list(emb.shape)}")
    u, s, vt = np.linalg.svd(emb, full_matrices=False)
    coords = emb @ vt[:2].T
    return SpectrumReport(s, coords)


def write_spectrum_csv(report: SpectrumReport, path) -> None:
    """CSV of per-item coordinates plus a sidecar singular-value file."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("item_id,x,y\n")
        for idx, (x, y) in enumerate(report.coords, start=1):
            fh.write(f"{idx},{x:.10g},{y:.10g}\n")
    with open(f"{path}.singvals", "w", encoding="utf-8") as fh:
        for value in report.singular_values:
            fh.write(f"{value:.10g}\n")
