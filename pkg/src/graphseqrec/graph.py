"""Global item-transition graph: windowed accumulation, normalization,
sparse propagation, and per-sequence subgraph extraction.

The graph lives on an (num_items + 1)-node index space; row/column 0 is the
padding slot and never carries an edge.  Construction is two-phase: a
directed accumulator collects fractional co-occurrence weights, then
``normalize_finalize`` produces the immutable symmetric matrix with unit
self-loops that the rest of the package propagates over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .autodiff import ShapeMismatch, Tensor, _accumulate, _node
from .data import ItemSequence


@dataclass
class DirectedAccumulator:
    """Intermediate directed graph built by windowed pair accumulation."""
    num_nodes: int
    weights: Dict[Tuple[int, int], float] = field(default_factory=dict)
    seen_items: set = field(default_factory=set)

    def add(self, i: int, j: int, w: float) -> None:
        key = (i, j)
        self.weights[key] = self.weights.get(key, 0.0) + w

    def degrees(self, mode: str = "weighted") -> np.ndarray:
        """Per-node degree in the directed graph, counting out plus in edges.

        ``weighted`` sums edge weights; ``count`` counts incident edges.
        """
        deg = np.zeros(self.num_nodes, dtype=np.float64)
        for (i, j), w in self.weights.items():
            inc = w if mode == "weighted" else 1.0
            deg[i] += inc
            deg[j] += inc
        return deg


def accumulate(sequences: Sequence[ItemSequence], window: int = 2,
               num_items: Optional[int] = None) -> DirectedAccumulator:
    """Windowed transition weights: each pair at offset k within the window
    contributes 1/k to the directed edge (earlier item, later item)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if num_items is None:
        num_items = max((max(s.items) for s in sequences if s.items), default=0)
    acc = DirectedAccumulator(num_items + 1)
    for seq in sequences:
        items = seq.items
        acc.seen_items.update(items)
        for i, src in enumerate(items):
            for k in range(1, window + 1):
                if i + k >= len(items):
                    break
                acc.add(src, items[i + k], 1.0 / k)
    acc.seen_items.discard(0)
    return acc


class TransitionGraph:
    """Finalized sparse item-item graph (symmetric, unit self-loops)."""

    def __init__(self, matrix: sp.csr_matrix, seen_items: Iterable[int]):
        self.matrix = matrix
        self.num_nodes = matrix.shape[0]
        self.seen_items = frozenset(int(i) for i in seen_items)
        self._transposed: Optional[sp.csr_matrix] = None

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def _transpose(self) -> sp.csr_matrix:
        if self._transposed is None:
            self._transposed = self.matrix.T.tocsr()
        return self._transposed

    def spmv(self, x: Tensor) -> Tensor:
        """Sparse matrix times dense tensor; differentiable in x only
        (edge weights are fixed buffers, never parameters)."""
        if x.ndim != 2 or x.shape[0] != self.num_nodes:
            raise ShapeMismatch(
                f"spmv: graph is [{self.num_nodes}x{self.num_nodes}], operand is {list(x.shape)}")
        data = self.matrix @ x.data
        mat_t = self._transpose()

        def back(g, x=x, mat_t=mat_t):
            _accumulate(x, mat_t @ g)

        return _node(data, (x,), back, "spmv")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Plain (non-differentiable) product with a dense array."""
        return self.matrix @ np.asarray(x, dtype=np.float64)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def submatrix(self, ids: np.ndarray) -> np.ndarray:
        """Dense block of weights between the given node ids."""
        return self.matrix[ids][:, ids].toarray()

    def entries(self) -> List[Tuple[int, int, float]]:
        coo = self.matrix.tocoo()
        triples = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        return [(int(i), int(j), float(w)) for i, j, w in triples]

    def dump(self, path) -> None:
        """Text dump, one 'i<TAB>j<TAB>weight' line per entry in sorted order."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, j, w in self.entries():
                fh.write(f"{i}\t{j}\t{w:.17g}\n")


def normalize_finalize(acc: DirectedAccumulator, degree_mode: str = "weighted",
                       self_loop: float = 1.0) -> TransitionGraph:
    """Scale each directed entry by (1/deg(i) + 1/deg(j)), symmetrize by
    adding the transpose, then add a self-loop to every interacted item."""
    if degree_mode not in ("weighted", "count"):
        raise ValueError(f"degree_mode must be 'weighted' or 'count', got {degree_mode!r}")
    deg = acc.degrees(degree_mode)
    n = acc.num_nodes
    rows, cols, vals = [], [], []
    for (i, j), w in acc.weights.items():
        assert deg[i] > 0.0 and deg[j] > 0.0, "entry with zero-degree endpoint"
        vals.append((1.0 / deg[i] + 1.0 / deg[j]) * w)
        rows.append(i)
        cols.append(j)
    directed = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    symmetric = directed + directed.T
    if acc.seen_items:
        loop_ids = np.fromiter(sorted(acc.seen_items), dtype=np.int64)
        loops = sp.csr_matrix(
            (np.full(loop_ids.size, self_loop), (loop_ids, loop_ids)), shape=(n, n))
        symmetric = symmetric + loops
    symmetric.sum_duplicates()
    symmetric.sort_indices()
    return TransitionGraph(symmetric.tocsr(), acc.seen_items)


def build_transition_graph(sequences: Sequence[ItemSequence], window: int = 2,
                           num_items: Optional[int] = None,
                           degree_mode: str = "weighted") -> TransitionGraph:
    return normalize_finalize(accumulate(sequences, window, num_items), degree_mode)


@dataclass(frozen=True)
class SubgraphPerturbation:
    """Detached low-rank refinement used when subgraphs read the refined graph.

    ``left``/``right`` are the graph-propagated factor values (plain arrays;
    no gradient flows back through subgraph extraction), so the refined
    weight between items i and j is base + strength * left[i] . right[j].
    """
    left: np.ndarray
    right: np.ndarray
    strength: float


def extract_subgraph(graph: TransitionGraph, padded_seq: np.ndarray,
                     perturbation: Optional[SubgraphPerturbation] = None) -> np.ndarray:
    """Dense position-aligned weight block for one padded sequence.

    Entry (p, q) is the (possibly refined) graph weight between the items at
    positions p and q; rows/columns at padding positions are zero.
    """
    padded_seq = np.asarray(padded_seq, dtype=np.int64)
    n = padded_seq.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    real = padded_seq > 0
    if not real.any():
        return out
    ids = padded_seq[real]
    block = graph.submatrix(ids)
    if perturbation is not None and perturbation.strength != 0.0:
        block = block + perturbation.strength * (
            perturbation.left[ids] @ perturbation.right[ids].T)
    out[np.ix_(real, real)] = block
    return out


def extract_subgraph_batch(graph: TransitionGraph, seqs: np.ndarray,
                           perturbation: Optional[SubgraphPerturbation] = None) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.int64)
    return np.stack([extract_subgraph(graph, row, perturbation) for row in seqs])
