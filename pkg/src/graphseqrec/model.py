"""Full model state: encoder, per-user gate, and graph-refinement factors
bundled behind one named parameter map, plus the forward paths that the
training loop and the evaluator share.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from . import collab, encoder
from .autodiff import Tensor
from .checkpoint import load_archive, save_archive
from .graph import TransitionGraph, extract_subgraph_batch


@dataclass
class ModelConfig:
    num_items: int
    num_users: int
    dim: int = 64
    max_len: int = 50
    heads: int = 2
    encoder_layers: int = 2
    dropout: float = 0.2
    gcn_layers: int = 2
    alpha: float = 0.05
    rank: int = 32
    literal_layer_avg: bool = True
    enable_agcl: bool = True
    enable_pge: bool = True
    pge_graph: str = "refined"
    fusion_ablation: bool = False

    def __post_init__(self):
        if self.pge_graph not in ("original", "refined"):
            raise ValueError(f"pge_graph must be 'original' or 'refined', got {self.pge_graph!r}")


# parameter rows that must stay zero (padding slots)
PADDED_ROW_PARAMS = ("item_emb", "pert_left", "pert_right")


class Model:
    def __init__(self, cfg: ModelConfig, graph: TransitionGraph,
                 rng: np.random.Generator, zero_pge_projection: bool = False):
        self.cfg = cfg
        self.graph = graph
        self.enc_cfg = encoder.EncoderConfig(
            num_items=cfg.num_items, num_users=cfg.num_users, dim=cfg.dim,
            max_len=cfg.max_len, heads=cfg.heads, layers=cfg.encoder_layers,
            dropout=cfg.dropout)
        self.params: Dict[str, Tensor] = {}
        self.params.update(encoder.init_encoder_params(rng, self.enc_cfg))
        self.params.update(encoder.init_pge_params(rng, self.enc_cfg, zero_pge_projection))
        factors = collab.init_factors(rng, cfg.num_items + 1, cfg.rank, cfg.alpha)
        self.params["pert_left"] = factors.left
        self.params["pert_right"] = factors.right
        if cfg.fusion_ablation:
            self.params["fusion_w"] = Tensor(
                encoder.trunc_normal(rng, (2 * cfg.dim, cfg.dim)), requires_grad=True)
            self.params["fusion_b"] = Tensor(np.zeros(cfg.dim), requires_grad=True)

    @property
    def factors(self) -> collab.PerturbationFactors:
        return collab.PerturbationFactors(self.params["pert_left"],
                                          self.params["pert_right"],
                                          self.cfg.alpha, self.cfg.rank)

    # ----------------------------------------------------------------- graph
    def graph_representations(self) -> collab.GraphRepresentations:
        return collab.graph_representations(self.graph, self.params["item_emb"],
                                            self.factors, self.cfg.gcn_layers,
                                            self.cfg.literal_layer_avg)

    def subgraphs(self, seqs: np.ndarray) -> np.ndarray:
        """Per-sequence dense weight blocks for the relative encoding.

        Reads the refined graph when configured; that read is detached, so
        the factors stay trained by the collaborative loss alone.
        """
        pert = None
        if self.cfg.pge_graph == "refined" and self.cfg.alpha != 0.0:
            pert = collab.detached_perturbation(self.graph, self.factors)
        return extract_subgraph_batch(self.graph, seqs, pert)

    # --------------------------------------------------------------- encoder
    def encode_batch(self, seqs: np.ndarray, user_ids: np.ndarray,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
        rel_pe = None
        if self.cfg.enable_pge and not self.cfg.fusion_ablation:
            rel_pe = encoder.pge_encoding(self.params, user_ids, self.subgraphs(seqs))
        return encoder.encode(self.params, self.enc_cfg, seqs, rel_pe, rng)

    def hidden_states(self, seqs: np.ndarray, user_ids: np.ndarray,
                      rng: Optional[np.random.Generator] = None) -> Tensor:
        """Per-position states used for scoring; applies the fusion ablation
        (graph/sequence representation mixing) when that variant is on."""
        hidden = self.encode_batch(seqs, user_ids, rng)
        if not self.cfg.fusion_ablation:
            return hidden
        reps = self.graph_representations()
        pooled = self._pooled_graph_rows(reps.refined, seqs)
        b, n = seqs.shape
        tiled = ad.add(Tensor(np.zeros((b, n, self.cfg.dim))), pooled)
        mixed = ad.concat_cols([hidden, tiled])
        return ad.tanh(ad.add(ad.matmul(mixed, self.params["fusion_w"]),
                              self.params["fusion_b"]))

    def _pooled_graph_rows(self, reps: Tensor, seqs: np.ndarray) -> Tensor:
        rows = ad.gather(reps, seqs)
        real = (seqs > 0).astype(np.float64)
        weights = real / np.maximum(real.sum(axis=1, keepdims=True), 1.0)
        pooled = ad.sum_axis(ad.mul(rows, Tensor(weights[:, :, None])), axis=1, keepdims=True)
        return pooled

    def user_reprs(self, seqs: np.ndarray, user_ids: np.ndarray,
                   rng: Optional[np.random.Generator] = None) -> Tensor:
        return encoder.user_repr(self.hidden_states(seqs, user_ids, rng), seqs)

    # ------------------------------------------------------------- training
    def drop_padding_grads(self) -> None:
        """Zero the gradient of every padding row so those rows never move."""
        for name in PADDED_ROW_PARAMS:
            t = self.params[name]
            if t.grad is not None:
                t.grad[0] = 0.0

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    # ------------------------------------------------------------ persistence
    def parameter_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def save(self, path, extra: Optional[Dict[str, np.ndarray]] = None) -> None:
        arrays = {name: t.data.copy() for name, t in self.params.items()}
        if extra:
            arrays.update(extra)
        save_archive(path, arrays)

    def load(self, path) -> Dict[str, np.ndarray]:
        """Load parameters in place; returns leftover (non-parameter) arrays."""
        arrays = load_archive(path)
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter '{name}'")
            value = arrays.pop(name)
            if value.shape != t.data.shape:
                raise ad.ShapeMismatch(
                    f"checkpoint parameter '{name}' has shape {list(value.shape)}, "
                    f"model expects {list(t.data.shape)}")
            t.data = value.astype(np.float64)
        return arrays

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = snapshot[name].copy()
