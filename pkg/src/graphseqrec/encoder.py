"""Causal Transformer encoder over padded item sequences, with an optional
per-user relative positional encoding added to the attention logits.

Sequences are left-padded with item id 0, so the most recent item always
sits at the last position.  The per-user encoding is a single learned
scalar gate (an MLP projection of the user embedding) times the sequence's
item-item subgraph; the same matrix is added at every layer and head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderConfig:
    num_items: int
    num_users: int
    dim: int = 64
    max_len: int = 50
    heads: int = 2
    layers: int = 2
    dropout: float = 0.2
    ln_eps: float = 1e-8

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std)


def init_encoder_params(rng: np.random.Generator, cfg: EncoderConfig) -> Dict[str, Tensor]:
    """Embeddings plus per-layer attention/FFN/layer-norm weights.

    The padding row of the item table starts at zero and is kept there by
    the training loop (its gradient is dropped before each step).
    """
    d = cfg.dim
    params: Dict[str, Tensor] = {}
    item = trunc_normal(rng, (cfg.num_items + 1, d))
    item[0] = 0.0
    params["item_emb"] = Tensor(item, requires_grad=True)
    params["pos_emb"] = Tensor(trunc_normal(rng, (cfg.max_len, d)), requires_grad=True)
    for layer in range(cfg.layers):
        p = f"layer{layer}."
        for name in ("query", "key", "value", "out"):
            params[p + f"attn_{name}_w"] = Tensor(trunc_normal(rng, (d, d)), requires_grad=True)
            params[p + f"attn_{name}_b"] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ffn_w1"] = Tensor(trunc_normal(rng, (d, d)), requires_grad=True)
        params[p + "ffn_b1"] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ffn_w2"] = Tensor(trunc_normal(rng, (d, d)), requires_grad=True)
        params[p + "ffn_b2"] = Tensor(np.zeros(d), requires_grad=True)
        for sub in ("ln1", "ln2"):
            params[p + sub + "_g"] = Tensor(np.ones(d), requires_grad=True)
            params[p + sub + "_b"] = Tensor(np.zeros(d), requires_grad=True)
    params["ln_final_g"] = Tensor(np.ones(d), requires_grad=True)
    params["ln_final_b"] = Tensor(np.zeros(d), requires_grad=True)
    return params


def init_pge_params(rng: np.random.Generator, cfg: EncoderConfig,
                    zero_projection: bool = False) -> Dict[str, Tensor]:
    """User embeddings and the two-layer scalar projection.

    With zero_projection the gate output is exactly 0 for every user, which
    makes the encoder's outputs identical to running without the encoding.
    """
    d = cfg.dim
    params = {
        "user_emb": Tensor(trunc_normal(rng, (cfg.num_users, d)), requires_grad=True),
        "pge_w1": Tensor(trunc_normal(rng, (d, d)), requires_grad=True),
        "pge_b1": Tensor(np.zeros(d), requires_grad=True),
        "pge_w2": Tensor(trunc_normal(rng, (d, 1)), requires_grad=True),
        "pge_b2": Tensor(np.zeros(1), requires_grad=True),
    }
    if zero_projection:
        params["pge_w2"] = Tensor(np.zeros((d, 1)), requires_grad=True)
    return params


def pge_gate(params: Dict[str, Tensor], user_ids) -> Tensor:
    """Per-user scalar weight on global information: MLP(user embedding)."""
    s = ad.gather(params["user_emb"], np.asarray(user_ids, dtype=np.int64))
    hidden = ad.tanh(ad.add(ad.matmul(s, params["pge_w1"]), params["pge_b1"]))
    return ad.add(ad.matmul(hidden, params["pge_w2"]), params["pge_b2"])


def pge_encoding(params: Dict[str, Tensor], user_ids, subgraphs: np.ndarray) -> Tensor:
    """Relative positional encoding stack: gate(user) times the subgraph."""
    return ad.per_sample_scale(pge_gate(params, user_ids), subgraphs)


def attention_mask(seqs: np.ndarray) -> np.ndarray:
    """Boolean (B, N, N) visibility: causal, keys must be real items, and the
    diagonal stays visible so padding rows never hit a fully masked softmax."""
    seqs = np.asarray(seqs)
    b, n = seqs.shape
    causal = np.tril(np.ones((n, n), dtype=bool))
    key_real = (seqs > 0)[:, None, :]
    mask = causal[None, :, :] & key_real
    eye = np.eye(n, dtype=bool)
    return mask | eye[None, :, :]


def encode(params: Dict[str, Tensor], cfg: EncoderConfig, seqs: np.ndarray,
           rel_pe: Optional[Tensor] = None,
           rng: Optional[np.random.Generator] = None) -> Tensor:
    """Hidden states (B, N, d) for a batch of padded id sequences.

    ``rel_pe`` is an optional (B, N, N) tensor added to every layer's and
    head's attention logits before masking.  Passing an rng enables
    dropout; evaluation omits it.
    """
    seqs = np.asarray(seqs, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[1] != cfg.max_len:
        raise ad.ShapeMismatch(f"encode: sequences must be [B, {cfg.max_len}], got {list(seqs.shape)}")
    if not (seqs > 0).any(axis=1).all():
        bad = int(np.flatnonzero(~(seqs > 0).any(axis=1))[0])
        raise ValueError(f"encode: all-padding sequence at batch position {bad}")
    d = cfg.dim
    dh = d // cfg.heads
    scale = 1.0 / np.sqrt(dh)
    mask = attention_mask(seqs)

    h = ad.add(ad.gather(params["item_emb"], seqs), params["pos_emb"])
    h = ad.dropout(h, cfg.dropout, rng)
    for layer in range(cfg.layers):
        p = f"layer{layer}."
        a = ad.layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"], cfg.ln_eps)
        q = ad.add(ad.matmul(a, params[p + "attn_query_w"]), params[p + "attn_query_b"])
        k = ad.add(ad.matmul(a, params[p + "attn_key_w"]), params[p + "attn_key_b"])
        v = ad.add(ad.matmul(a, params[p + "attn_value_w"]), params[p + "attn_value_b"])
        head_outs = []
        for i in range(cfg.heads):
            lo, hi = i * dh, (i + 1) * dh
            logits = ad.mul(ad.matmul(ad.slice_cols(q, lo, hi),
                                      ad.transpose(ad.slice_cols(k, lo, hi))), scale)
            if rel_pe is not None:
                logits = ad.add(logits, rel_pe)
            weights = ad.softmax_rows(logits, mask)
            head_outs.append(ad.matmul(weights, ad.slice_cols(v, lo, hi)))
        merged = head_outs[0] if cfg.heads == 1 else ad.concat_cols(head_outs)
        attended = ad.add(ad.matmul(merged, params[p + "attn_out_w"]), params[p + "attn_out_b"])
        h = ad.add(h, ad.dropout(attended, cfg.dropout, rng))
        f = ad.layer_norm(h, params[p + "ln2_g"], params[p + "ln2_b"], cfg.ln_eps)
        f = ad.relu(ad.add(ad.matmul(f, params[p + "ffn_w1"]), params[p + "ffn_b1"]))
        f = ad.add(ad.matmul(f, params[p + "ffn_w2"]), params[p + "ffn_b2"])
        h = ad.add(h, ad.dropout(f, cfg.dropout, rng))
    return ad.layer_norm(h, params["ln_final_g"], params["ln_final_b"], cfg.ln_eps)


def last_real_position(seqs: np.ndarray) -> np.ndarray:
    """Index of the final non-padding position per sequence."""
    seqs = np.asarray(seqs)
    real = seqs > 0
    if not real.any(axis=1).all():
        bad = int(np.flatnonzero(~real.any(axis=1))[0])
        raise ValueError(f"sequence at batch position {bad} is all padding")
    n = seqs.shape[1]
    return n - 1 - np.argmax(real[:, ::-1], axis=1)


def user_repr(hidden: Tensor, seqs: np.ndarray) -> Tensor:
    """Preference representation: the hidden state at the last real item."""
    return ad.select_positions(hidden, last_real_position(seqs))
