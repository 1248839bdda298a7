"""Layout-aware transformer encoder with MLM, box-regression and classification heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .doc import BINS, TokenSequence
from .masking import IGNORE, MaskedSequence, derive_seed

GIOU_EPS = 1e-9
PAD_BIAS = -1e9


@dataclass
class ModelConfig:
    vocab_size: int = 512
    hidden_size: int = 128
    layers: int = 2
    heads: int = 4
    ffn_size: int = 256
    max_len: int = 512
    max_1d_position: int = 512
    coordinate_bins: int = BINS
    relative_bias_buckets: int = 32
    max_distance_1d: int = 128
    max_distance_2d: int = BINS
    dropout: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_size % self.heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by heads {self.heads}")
        if self.coordinate_bins != BINS:
            raise ValueError(f"coordinate_bins must equal the quantization bins ({BINS})")
        if self.relative_bias_buckets % 4:
            raise ValueError("relative_bias_buckets must be a multiple of 4")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray          # [B, L]
    pos_1d: np.ndarray       # [B, L]
    qbox: np.ndarray         # [B, L, 4] integer bins
    valid: np.ndarray        # [B, L] bool
    mlm_labels: np.ndarray   # [B, L], IGNORE where unlabeled
    box_labels: np.ndarray   # [B, L, 4], NaN where unlabeled
    token_labels: np.ndarray  # [B, L], IGNORE where unlabeled
    doc_labels: np.ndarray   # [B], IGNORE when absent

    @property
    def shape(self):
        return self.ids.shape


def collate(items: Sequence, pad_id: int = 0, token_labels: Optional[Sequence[np.ndarray]] = None,
            doc_labels: Optional[Sequence[int]] = None) -> Batch:
    """Pad TokenSequences or MaskedSequences into one right-padded batch."""
    seqs = [it.seq if isinstance(it, MaskedSequence) else it for it in items]
    B, L = len(seqs), max(len(s) for s in seqs)
    ids = np.full((B, L), pad_id, dtype=np.int64)
    pos = np.zeros((B, L), dtype=np.int64)
    qbox = np.zeros((B, L, 4), dtype=np.int64)
    valid = np.zeros((B, L), dtype=bool)
    mlm = np.full((B, L), IGNORE, dtype=np.int64)
    boxl = np.full((B, L, 4), np.nan)
    tokl = np.full((B, L), IGNORE, dtype=np.int64)
    docl = np.full(B, IGNORE, dtype=np.int64)
    for b, (it, s) in enumerate(zip(items, seqs)):
        n = len(s)
        ids[b, :n] = s.tokens
        pos[b, :n] = s.pos_1d
        qbox[b, :n] = s.qbox
        valid[b, :n] = True
        if isinstance(it, MaskedSequence):
            mlm[b, :n] = it.mlm_labels
            boxl[b, :n] = it.box_labels
        if token_labels is not None:
            tokl[b, :n] = token_labels[b]
        if doc_labels is not None:
            docl[b] = doc_labels[b]
    return Batch(ids, pos, qbox, valid, mlm, boxl, tokl, docl)


# ---------------------------------------------------------------------------
# relative position bucketing


def relative_bucket(offset, num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """Signed log-scale bucket of an integer offset.

    Half the buckets hold non-positive offsets, half positive ones. Within a half,
    small distances get exact buckets and larger ones share log-spaced buckets,
    with everything at or beyond ``max_distance`` clamped to the last bucket.
    """
    offset = np.asarray(offset, dtype=np.int64)
    half = num_buckets // 2
    max_exact = half // 2
    n = np.abs(offset)
    scaled = np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact)
    large = max_exact + np.floor(scaled * (half - max_exact)).astype(np.int64)
    large = np.minimum(large, half - 1)
    return np.where(offset > 0, half, 0) + np.where(n < max_exact, n, large)


def box_centers(qbox: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return (qbox[..., 0] + qbox[..., 2]) // 2, (qbox[..., 1] + qbox[..., 3]) // 2


def relative_bucket_ids(pos_1d: np.ndarray, qbox: np.ndarray, cfg: ModelConfig):
    """Bucket ids [.., L, L] for 1D, x-center and y-center offsets (key minus query)."""
    xc, yc = box_centers(qbox)

    def rel(v, maxd):
        return relative_bucket(v[..., None, :] - v[..., :, None], cfg.relative_bias_buckets, maxd)

    return (rel(pos_1d, cfg.max_distance_1d), rel(xc, cfg.max_distance_2d),
            rel(yc, cfg.max_distance_2d))


# ---------------------------------------------------------------------------
# model


class LayoutEncoder:
    """Parameters plus the forward computations; all learnable tensors live in ``params``."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: Optional[dict] = None):
        self.config = config
        self.params: dict[str, Tensor] = params if params is not None else init_params(config, seed)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def add_head(self, name: str, out_dim: int, seed: int, zero: bool = False):
        """Attach (or replace) a linear head ``name`` mapping hidden states to ``out_dim``."""
        cfg = self.config
        rng = np.random.default_rng(derive_seed(seed, "head", name))
        w = np.zeros((cfg.hidden_size, out_dim)) if zero else rng.normal(0, cfg.init_std, (cfg.hidden_size, out_dim))
        self.params[f"{name}.w"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(out_dim), requires_grad=True)

    def has_head(self, name: str) -> bool:
        return f"{name}.w" in self.params

    # -- inputs ------------------------------------------------------------

    def embed(self, batch: Batch, training: bool = False, seed: int = 0) -> Tensor:
        cfg, p = self.config, self.params
        if batch.ids.max() >= cfg.vocab_size or batch.ids.min() < 0:
            raise IndexError(f"token id out of range for vocab_size {cfg.vocab_size}")
        if batch.pos_1d.max() >= cfg.max_1d_position or batch.pos_1d.min() < 0:
            raise IndexError(f"1D position out of range [0, {cfg.max_1d_position})")
        q = batch.qbox
        if q.min() < 0 or q.max() > cfg.coordinate_bins:
            raise IndexError(f"coordinates out of range [0, {cfg.coordinate_bins}]")
        w = np.clip(q[..., 2] - q[..., 0], 0, cfg.coordinate_bins)
        h = np.clip(q[..., 3] - q[..., 1], 0, cfg.coordinate_bins)
        x = ad.embedding_gather(p["emb.token"], batch.ids)
        x = x + ad.embedding_gather(p["emb.pos1d"], batch.pos_1d)
        x = x + self.layout_embedding(q[..., 0], q[..., 1], q[..., 2], q[..., 3], w, h)
        x = affine_ln(x, p["emb.ln.g"], p["emb.ln.b"])
        return ad.dropout(x, cfg.dropout, derive_seed(seed, "emb"), training)

    def layout_embedding(self, x1, y1, x2, y2, w, h) -> Tensor:
        p = self.params
        out = ad.embedding_gather(p["emb.x1"], x1)
        for name, idx in (("y1", y1), ("x2", x2), ("y2", y2), ("w", w), ("h", h)):
            out = out + ad.embedding_gather(p[f"emb.{name}"], idx)
        return out

    def attention_bias(self, pos_1d: np.ndarray, qbox: np.ndarray) -> Tensor:
        """Per-head additive bias [.., heads, L, L] from bucketed 1D and box-center offsets."""
        b1, bx, by = relative_bucket_ids(pos_1d, qbox, self.config)
        p = self.params
        bias = (ad.embedding_gather(p["rel.1d"], b1) + ad.embedding_gather(p["rel.x"], bx)
                + ad.embedding_gather(p["rel.y"], by))
        nd = bias.ndim
        return ad.transpose(bias, tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2))

    # -- encoder -----------------------------------------------------------

    def encode(self, batch: Batch, training: bool = False, seed: int = 0) -> Tensor:
        cfg, p = self.config, self.params
        B, L = batch.shape
        x = self.embed(batch, training, seed)
        bias = self.attention_bias(batch.pos_1d, batch.qbox)
        pad = np.where(batch.valid, 0.0, PAD_BIAS)[:, None, None, :]
        for i in range(cfg.layers):
            pre = f"layer{i}."
            h = affine_ln(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = split_heads(linear(h, p, pre + "attn.q"), cfg)
            k = split_heads(linear(h, p, pre + "attn.k"), cfg)
            v = split_heads(linear(h, p, pre + "attn.v"), cfg)
            scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(cfg.head_dim))
            scores = scores + bias + pad
            attn = ad.softmax(scores, axis=-1)
            attn = ad.dropout(attn, cfg.dropout, derive_seed(seed, pre, "attn"), training)
            ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, L, cfg.hidden_size))
            out = ad.dropout(linear(ctx, p, pre + "attn.o"), cfg.dropout,
                             derive_seed(seed, pre, "attn_out"), training)
            x = x + out
            h = affine_ln(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h = linear(ad.gelu(linear(h, p, pre + "ffn.in")), p, pre + "ffn.out")
            x = x + ad.dropout(h, cfg.dropout, derive_seed(seed, pre, "ffn"), training)
        return affine_ln(x, p["final_ln.g"], p["final_ln.b"])

    # -- heads -------------------------------------------------------------

    def gather_states(self, states: Tensor, flat_positions: np.ndarray) -> Tensor:
        H = states.shape[-1]
        return ad.embedding_gather(ad.reshape(states, (-1, H)), np.asarray(flat_positions))

    def mlm_logits(self, states: Tensor, flat_positions: np.ndarray) -> Tensor:
        p = self.params
        h = self.gather_states(states, flat_positions)
        h = affine_ln(ad.gelu(linear(h, p, "mlm.dense")), p["mlm.ln.g"], p["mlm.ln.b"])
        return ad.matmul(h, ad.transpose(p["emb.token"], (1, 0))) + p["mlm.bias"]

    def mpm_predict(self, states: Tensor, flat_positions: np.ndarray) -> Tensor:
        """Boxes (x1, y1, x2, y2) in [0, 1] from a sigmoid (cx, cy, w, h) parameterization."""
        p = self.params
        h = self.gather_states(states, flat_positions)
        raw = ad.sigmoid(linear(ad.gelu(linear(h, p, "mpm.dense")), p, "mpm.out"))
        return center_size_to_box(raw)

    def head_logits(self, states: Tensor, name: str) -> Tensor:
        return linear(states, self.params, name)


def center_size_to_box(raw: Tensor) -> Tensor:
    cx, cy, w, h = (raw[:, i:i + 1] for i in range(4))
    half_w, half_h = w * 0.5, h * 0.5
    return ad.concat([ad.clip(cx - half_w, 0.0, 1.0), ad.clip(cy - half_h, 0.0, 1.0),
                      ad.clip(cx + half_w, 0.0, 1.0), ad.clip(cy + half_h, 0.0, 1.0)], axis=1)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def affine_ln(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    return ad.layer_norm(x, axis=-1, eps=eps) * gain + bias


def split_heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    B, L, _ = x.shape
    return ad.transpose(ad.reshape(x, (B, L, cfg.heads, cfg.head_dim)), (0, 2, 1, 3))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    H, F, std = cfg.hidden_size, cfg.ffn_size, cfg.init_std
    shapes: dict[str, tuple] = {
        "emb.token": (cfg.vocab_size, H),
        "emb.pos1d": (cfg.max_1d_position, H),
        **{f"emb.{c}": (cfg.coordinate_bins + 1, H) for c in ("x1", "y1", "x2", "y2", "w", "h")},
        "emb.ln.g": (H,), "emb.ln.b": (H,),
        **{f"rel.{a}": (cfg.relative_bias_buckets, cfg.heads) for a in ("1d", "x", "y")},
        "final_ln.g": (H,), "final_ln.b": (H,),
        "mlm.dense.w": (H, H), "mlm.dense.b": (H,), "mlm.ln.g": (H,), "mlm.ln.b": (H,),
        "mlm.bias": (cfg.vocab_size,),
        "mpm.dense.w": (H, H), "mpm.dense.b": (H,), "mpm.out.w": (H, 4), "mpm.out.b": (4,),
    }
    for i in range(cfg.layers):
        pre = f"layer{i}."
        for n in ("ln1", "ln2"):
            shapes[pre + n + ".g"] = (H,)
            shapes[pre + n + ".b"] = (H,)
        for n in ("q", "k", "v", "o"):
            shapes[pre + f"attn.{n}.w"] = (H, H)
            shapes[pre + f"attn.{n}.b"] = (H,)
        shapes[pre + "ffn.in.w"] = (H, F)
        shapes[pre + "ffn.in.b"] = (F,)
        shapes[pre + "ffn.out.w"] = (F, H)
        shapes[pre + "ffn.out.b"] = (H,)
    params = {}
    for name in sorted(shapes):
        rng = np.random.default_rng(derive_seed(seed, "init", name))
        shape = shapes[name]
        if name.endswith(".g"):
            data = np.ones(shape)
        elif name.endswith(".b") or name == "mlm.bias":
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, std, shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean CE over rows of ``logits`` [N, K] against integer ``targets`` [N]."""
    targets = np.asarray(targets)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    picked = ad.sum(ad.log_softmax(logits, axis=-1) * onehot, axis=-1)
    return -ad.mean(picked)


def mlm_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Average cross entropy over the masked tokens (rows of ``logits``)."""
    if len(labels) == 0:
        raise ValueError("mlm_loss: no masked positions")
    return cross_entropy(logits, labels)


def giou(truth, pred) -> Tensor:
    """Per-box generalized IoU for [N, 4] boxes (x1, y1, x2, y2)."""
    t, p = ad.as_tensor(truth), ad.as_tensor(pred)

    def col(x, i):
        return x[:, i]

    tx1, ty1, tx2, ty2 = (col(t, i) for i in range(4))
    px1, py1, px2, py2 = (col(p, i) for i in range(4))
    iw = ad.relu(ad.minimum(tx2, px2) - ad.maximum(tx1, px1))
    ih = ad.relu(ad.minimum(ty2, py2) - ad.maximum(ty1, py1))
    inter = iw * ih
    union = (tx2 - tx1) * (ty2 - ty1) + (px2 - px1) * (py2 - py1) - inter
    enclose = (ad.maximum(tx2, px2) - ad.minimum(tx1, px1)) * (ad.maximum(ty2, py2) - ad.minimum(ty1, py1))
    # floor rather than add the guard so non-degenerate boxes are exact
    return inter / ad.maximum(union, GIOU_EPS) - (enclose - union) / ad.maximum(enclose, GIOU_EPS)


def mpm_loss(truth, pred) -> Tensor:
    """Negative mean GIoU over the masked boxes; lies in [-1, 1]."""
    n = ad.as_tensor(truth).shape[0]
    if n == 0:
        raise ValueError("mpm_loss: no masked boxes")
    return -ad.mean(giou(truth, pred))


def total_loss(l_mlm, l_mpm, lam: float) -> Tensor:
    return ad.add(l_mlm, ad.mul(l_mpm, lam))


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """CE over positions whose label is not IGNORE; logits [..., K], labels [...]."""
    labels = np.asarray(labels)
    keep = np.flatnonzero(labels.reshape(-1) != IGNORE)
    if len(keep) == 0:
        raise ValueError("classification loss: every position is ignored")
    K = logits.shape[-1]
    flat = ad.embedding_gather(ad.reshape(logits, (-1, K)), keep)
    return cross_entropy(flat, labels.reshape(-1)[keep])


def token_classification_loss(model: LayoutEncoder, states: Tensor, labels: np.ndarray,
                              head: str = "tok_cls") -> Tensor:
    return classification_loss(model.head_logits(states, head), labels)


def doc_classification_loss(model: LayoutEncoder, states: Tensor, labels: np.ndarray,
                            head: str = "doc_cls") -> Tensor:
    cls_states = states[:, 0, :]
    return classification_loss(model.head_logits(cls_states, head), labels)


def pretrain_losses(model: LayoutEncoder, batch: Batch, lam: float, enable_mpm: bool,
                    training: bool = True, seed: int = 0) -> dict:
    """Forward pass for one pre-training batch; returns the loss tensors."""
    states = model.encode(batch, training=training, seed=seed)
    flat_mlm = np.flatnonzero(batch.mlm_labels.reshape(-1) != IGNORE)
    l_mlm = mlm_loss(model.mlm_logits(states, flat_mlm), batch.mlm_labels.reshape(-1)[flat_mlm])
    out = {"mlm": l_mlm, "mpm": None, "total": l_mlm}
    if enable_mpm:
        flat_box = np.flatnonzero(~np.isnan(batch.box_labels.reshape(-1, 4)[:, 0]))
        if len(flat_box):
            truth = batch.box_labels.reshape(-1, 4)[flat_box]
            l_mpm = mpm_loss(truth, model.mpm_predict(states, flat_box))
            out["mpm"] = l_mpm
            out["total"] = total_loss(l_mlm, l_mpm, lam)
    return out


def sequence_token_labels(seq: TokenSequence, word_tags: Sequence[int]) -> np.ndarray:
    """Put each word's label on its first token; every other position is IGNORE."""
    labels = np.full(len(seq.tokens), IGNORE, dtype=np.int64)
    firsts = seq.first_token_positions()
    labels[firsts] = np.asarray(word_tags, dtype=np.int64)
    return labels
