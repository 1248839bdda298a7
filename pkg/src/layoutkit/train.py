"""Pre-training and fine-tuning loops, checkpoints, prediction and evaluation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_archive, save_archive
from .doc import ONE_D_MODES, TWO_D_MODES, Document, TokenSequence, Vocabulary, prepare_document, tokenize
from .masking import IGNORE, STRATEGIES, build_example, derive_seed
from .metrics import AccuracyReport, EvalReport, Span, accuracy, bio_decode, bio_encode, bio_labels, f1
from .model import (Batch, LayoutEncoder, ModelConfig, classification_loss, collate,
                    pretrain_losses)
from .robustness import segment_swap

TASKS = ("entities", "classification")
HEADS = {"entities": "tok_cls", "classification": "doc_cls"}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


def _check_fields(cls, d: dict, what: str):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")


@dataclass
class PretrainConfig:
    one_d_mode: str = "local"
    two_d_mode: str = "segment"
    strategy: str = "wwm_lam"
    enable_mpm: bool = True
    p_mlm: float = 0.25
    p_mpm: float = 0.15
    lam: float = 1.0
    lr: float = 1e-3
    warmup: float = 0.1
    grad_clip: float = 1.0
    steps: int = 400
    batch_size: int = 16
    max_len: int = 512
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.one_d_mode not in ONE_D_MODES:
            raise ValueError(f"one_d_mode must be one of {ONE_D_MODES}, got {self.one_d_mode!r}")
        if self.two_d_mode not in TWO_D_MODES:
            raise ValueError(f"two_d_mode must be one of {TWO_D_MODES}, got {self.two_d_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("p_mlm", "p_mpm"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        _check_optim(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        _check_fields(cls, d, "pretrain config")
        return cls(**d)


@dataclass
class FinetuneConfig:
    task: str = "entities"
    steps: int = 150
    batch_size: int = 16
    lr: float = 1e-3
    warmup: float = 0.1
    grad_clip: float = 1.0
    freeze_encoder: bool = False
    # labeled documents used, taken from the front of the split; 0 uses all of them.
    # A small labeled set against the full pre-training corpus is where pre-training pays off.
    train_docs: int = 100
    eval_every: int = 25
    one_d_mode: Optional[str] = None   # when set, must match the checkpoint
    two_d_mode: Optional[str] = None
    max_len: int = 512
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.train_docs < 0:
            raise ValueError("train_docs must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        _check_optim(self, allow_zero_steps=True)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneConfig":
        _check_fields(cls, d, "finetune config")
        return cls(**d)


def _check_optim(cfg, allow_zero_steps: bool = False):
    if cfg.lr <= 0:
        raise ValueError(f"lr must be > 0, got {cfg.lr}")
    if cfg.steps < (0 if allow_zero_steps else 1):
        raise ValueError(f"steps must be positive, got {cfg.steps}")
    if cfg.batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not 0.0 <= cfg.warmup < 1.0:
        raise ValueError(f"warmup fraction must lie in [0, 1), got {cfg.warmup}")
    if cfg.grad_clip <= 0:
        raise ValueError(f"grad_clip must be > 0, got {cfg.grad_clip}")


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adam with bias correction; parameters without a gradient are left alone."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(self.params):
            p = self.params[k]
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def lr_at(step: int, total: int, base: float, warmup: float) -> float:
    """Linear warmup over the first ``warmup`` fraction, then linear decay to zero."""
    w = int(round(warmup * total))
    if w and step < w:
        return base * (step + 1) / w
    return base * max(0.0, (total - step) / max(1, total - w))


def batch_schedule(n: int, batch_size: int, steps: int, seed: int):
    """Yield (epoch, indices) per step, drawing from seeded per-epoch permutations."""
    epoch, perm, cursor = 0, np.random.default_rng(derive_seed(seed, "epoch", 0)).permutation(n), 0
    bs = min(batch_size, n)
    for _ in range(steps):
        if cursor + bs > n:
            epoch += 1
            perm = np.random.default_rng(derive_seed(seed, "epoch", epoch)).permutation(n)
            cursor = 0
        yield epoch, perm[cursor:cursor + bs]
        cursor += bs


def encode_corpus(docs: Sequence[Document], vocab: Vocabulary, one_d_mode: str, two_d_mode: str,
                  max_len: int = 512) -> list[TokenSequence]:
    return [tokenize(prepare_document(d), vocab, one_d_mode, two_d_mode, max_len) for d in docs]


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """A model together with everything needed to feed and interpret it."""

    model: LayoutEncoder
    vocab: Vocabulary
    one_d_mode: str
    two_d_mode: str
    task: Optional[str] = None
    labels: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "model_config": self.model.config.to_dict(),
            "one_d_mode": self.one_d_mode,
            "two_d_mode": self.two_d_mode,
            "task": self.task,
            "labels": list(self.labels),
            "vocab": self.vocab.to_list(),
            "meta": self.meta,
        }

    def save(self, path) -> str:
        return save_archive(path, self.model.params, self.manifest())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, man = load_archive(path)
        model = LayoutEncoder(ModelConfig.from_dict(man["model_config"]), params=params)
        return cls(model, Vocabulary.from_list(man["vocab"]), man["one_d_mode"], man["two_d_mode"],
                   man.get("task"), list(man.get("labels", [])), man.get("meta", {}))

    def copy(self) -> "Checkpoint":
        params = {k: Tensor(p.data.copy(), requires_grad=True) for k, p in self.model.params.items()}
        return Checkpoint(LayoutEncoder(self.model.config, params=params), self.vocab,
                          self.one_d_mode, self.two_d_mode, self.task, list(self.labels), dict(self.meta))


def random_checkpoint(model_cfg: ModelConfig, vocab: Vocabulary, one_d_mode: str = "local",
                      two_d_mode: str = "segment", seed: int = 0) -> Checkpoint:
    """An untrained encoder, the baseline for measuring what pre-training buys."""
    model = LayoutEncoder(model_cfg, seed=derive_seed(seed, "model"))
    return Checkpoint(model, vocab, one_d_mode, two_d_mode, meta={"pretrained": False, "seed": seed})


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    trace: list[dict]

    def trace_csv(self) -> str:
        lines = ["step,lr,mlm,mpm,total"]
        for r in self.trace:
            mpm = "" if r["mpm"] is None else repr(r["mpm"])
            lines.append(f"{r['step']},{r['lr']!r},{r['mlm']!r},{mpm},{r['total']!r}")
        return "\n".join(lines) + "\n"


def _example(seq, vocab, cfg: PretrainConfig, epoch: int):
    # retry with a fresh seed in the rare case nothing gets masked
    for attempt in range(100):
        ex = build_example(seq, vocab, cfg.strategy, cfg.p_mlm,
                           derive_seed(cfg.seed, seq.doc_id, epoch, attempt),
                           enable_mpm=cfg.enable_mpm, p_mpm=cfg.p_mpm)
        if (ex.mlm_labels != IGNORE).any():
            return ex
    raise RuntimeError(f"{seq.doc_id}: could not draw a non-empty MLM plan")


def pretrain(cfg: PretrainConfig, model_cfg: ModelConfig, docs: Sequence[Document], vocab: Vocabulary,
             log: Optional[Callable[[dict], None]] = None) -> PretrainResult:
    if not docs:
        raise ValueError("pretrain: empty corpus")
    cfg.validate()
    if len(vocab) > model_cfg.vocab_size:
        raise ValueError(f"vocabulary ({len(vocab)}) exceeds model vocab_size ({model_cfg.vocab_size})")
    seqs = encode_corpus(docs, vocab, cfg.one_d_mode, cfg.two_d_mode, cfg.max_len)
    model = LayoutEncoder(model_cfg, seed=derive_seed(cfg.seed, "model"))
    opt = Adam(model.params)
    trace = []
    for step, (epoch, idx) in enumerate(batch_schedule(len(seqs), cfg.batch_size, cfg.steps, cfg.seed)):
        batch = collate([_example(seqs[i], vocab, cfg, epoch) for i in idx], vocab.pad_id)
        model.zero_grad()
        losses = pretrain_losses(model, batch, cfg.lam, cfg.enable_mpm, training=True,
                                 seed=derive_seed(cfg.seed, "dropout", step))
        total = losses["total"].item()
        if not math.isfinite(total):
            raise TrainingDiverged(step, total)
        ad.backward(losses["total"])
        clip_grad_norm(model.params, cfg.grad_clip)
        lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup)
        opt.step(lr)
        rec = {"step": step, "lr": lr, "mlm": losses["mlm"].item(),
               "mpm": None if losses["mpm"] is None else losses["mpm"].item(), "total": total}
        trace.append(rec)
        if log:
            log(rec)
    meta = {"pretrained": True, "pretrain_config": cfg.to_dict()}
    return PretrainResult(Checkpoint(model, vocab, cfg.one_d_mode, cfg.two_d_mode, meta=meta), trace)


# ---------------------------------------------------------------------------
# fine-tuning and inference


def _targets(seqs: Sequence[TokenSequence], task: str, labels: list[str]):
    index = {l: i for i, l in enumerate(labels)}
    if task == "entities":
        if not any(any(t is not None for t in s.word_labels) for s in seqs):
            raise ValueError("entity fine-tuning needs word labels, none found in the corpus")
        out = []
        for s in seqs:
            tags = bio_encode(s.word_labels)
            unknown = set(tags) - set(index)
            if unknown:
                raise ValueError(f"{s.doc_id}: labels {sorted(unknown)} not in the label set")
            lab = np.full(len(s.tokens), IGNORE, dtype=np.int64)
            lab[s.first_token_positions()] = [index[t] for t in tags]
            out.append(lab)
        return out
    missing = [s.doc_id for s in seqs if s.doc_class is None]
    if missing:
        raise ValueError(f"classification fine-tuning needs document classes; missing for {missing[0]}")
    unknown = {s.doc_class for s in seqs} - set(index)
    if unknown:
        raise ValueError(f"document classes {sorted(unknown)} not in the label set")
    return [index[s.doc_class] for s in seqs]


def _batch(seqs, targets, task, pad_id) -> Batch:
    if task == "entities":
        return collate(seqs, pad_id, token_labels=targets)
    return collate(seqs, pad_id, doc_labels=targets)


def _head_logits(ckpt: Checkpoint, states: Tensor) -> Tensor:
    name = HEADS[ckpt.task]
    if ckpt.task == "classification":
        states = states[:, 0, :]
    return ckpt.model.head_logits(states, name)


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    curve: list[dict]     # dev score per evaluation point
    best_step: int
    best_score: float
    losses: list[float]

    def curve_csv(self) -> str:
        return "step,dev_score\n" + "".join(f"{r['step']},{r['dev_score']!r}\n" for r in self.curve)


def derive_label_set(task: str, tags: Sequence[str] = (), classes: Sequence[str] = ()) -> list[str]:
    if task == "entities":
        if not tags:
            raise ValueError("entity task needs a non-empty tag list")
        return bio_labels(tags)
    if not classes:
        raise ValueError("classification task needs a non-empty class list")
    return list(classes)


def finetune(cfg: FinetuneConfig, base: Checkpoint, train_docs: Sequence[Document],
             dev_docs: Sequence[Document], labels: Sequence[str]) -> FinetuneResult:
    """Train a task head (and optionally the encoder); keep the parameters scoring best on dev.

    ``labels`` is the full BIO label list for entities or the class list for classification.
    ``base`` is never modified.
    """
    cfg.validate()
    for name in ("one_d_mode", "two_d_mode"):
        want = getattr(cfg, name)
        if want is not None and want != getattr(base, name):
            raise ValueError(f"{name} mismatch: config asks for {want!r}, checkpoint uses {getattr(base, name)!r}")
    if not train_docs:
        raise ValueError("finetune: empty training corpus")
    if not dev_docs:
        raise ValueError("finetune: empty dev corpus")
    labels = list(labels)
    if cfg.task == "entities" and labels[:1] != ["O"]:
        raise ValueError("entity label set must start with 'O'")
    docs = list(train_docs[:cfg.train_docs] if cfg.train_docs else train_docs)
    seqs = encode_corpus(docs, base.vocab, base.one_d_mode, base.two_d_mode, cfg.max_len)
    targets = _targets(seqs, cfg.task, labels)

    ckpt = base.copy()
    ckpt.task, ckpt.labels = cfg.task, labels
    ckpt.meta = dict(base.meta, finetune_config=cfg.to_dict())
    head = HEADS[cfg.task]
    ckpt.model.add_head(head, len(labels), seed=cfg.seed)
    params = ckpt.model.params
    if cfg.freeze_encoder:
        for k, p in params.items():
            p.requires_grad = k.startswith(head + ".")
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    opt = Adam(trainable)

    dev_eval = _dev_scorer(cfg.task, dev_docs, ckpt.vocab, cfg.max_len)
    curve = [{"step": 0, "dev_score": dev_eval(ckpt)}]
    best = (curve[0]["dev_score"], 0, {k: p.data.copy() for k, p in params.items()})
    losses = []
    pad = ckpt.vocab.pad_id
    for step, (_, idx) in enumerate(batch_schedule(len(seqs), cfg.batch_size, cfg.steps, cfg.seed)):
        batch = _batch([seqs[i] for i in idx], [targets[i] for i in idx], cfg.task, pad)
        ckpt.model.zero_grad()
        states = ckpt.model.encode(batch, training=True, seed=derive_seed(cfg.seed, "ft-dropout", step))
        gold = batch.token_labels if cfg.task == "entities" else batch.doc_labels
        loss = classification_loss(_head_logits(ckpt, states), gold)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        ad.backward(loss)
        clip_grad_norm(trainable, cfg.grad_clip)
        opt.step(lr_at(step, cfg.steps, cfg.lr, cfg.warmup))
        losses.append(value)
        done = step + 1
        if done % cfg.eval_every == 0 or done == cfg.steps:
            score = dev_eval(ckpt)
            curve.append({"step": done, "dev_score": score})
            if score > best[0]:
                best = (score, done, {k: p.data.copy() for k, p in params.items()})
    for k, p in params.items():
        p.data = best[2][k]
        p.requires_grad = True
        p.grad = None
    ckpt.meta["best_step"], ckpt.meta["best_dev_score"] = best[1], best[0]
    return FinetuneResult(ckpt, curve, best[1], best[0], losses)


def _dev_scorer(task, dev_docs, vocab, max_len):
    if task == "entities":
        return lambda c: evaluate_entities(c, dev_docs, max_len=max_len)["entity"].overall.f1
    return lambda c: evaluate_classification(c, dev_docs, max_len=max_len).accuracy


def _logits(ckpt: Checkpoint, seqs: Sequence[TokenSequence], batch_size: int = 32) -> list[np.ndarray]:
    if ckpt.task not in TASKS or not ckpt.model.has_head(HEADS[ckpt.task]):
        raise ValueError("checkpoint has no fine-tuned task head")
    out = []
    with ad.no_grad():
        for i in range(0, len(seqs), batch_size):
            chunk = seqs[i:i + batch_size]
            states = ckpt.model.encode(collate(chunk, ckpt.vocab.pad_id), training=False)
            logits = _head_logits(ckpt, states).data
            out.extend(logits[b, :len(s)] if ckpt.task == "entities" else logits[b]
                       for b, s in enumerate(chunk))
    return out


def word_keys(seq: TokenSequence) -> list[tuple[int, int]]:
    """(source segment id, index within segment) per word; stable under reordering."""
    keys, prev, k = [], None, 0
    for s in seq.word_segment:
        k = k + 1 if s == prev else 0
        prev = s
        keys.append((int(seq.segment_ids[s]), k))
    return keys


def predict_word_labels(ckpt: Checkpoint, seqs: Sequence[TokenSequence], batch_size: int = 32) -> list[list[str]]:
    """Argmax label of each word's first token, in each sequence's own word order."""
    if ckpt.task != "entities":
        raise ValueError("checkpoint is not fine-tuned for entities")
    preds = []
    for s, logits in zip(seqs, _logits(ckpt, seqs, batch_size)):
        ids = logits[s.first_token_positions()].argmax(axis=-1)
        preds.append([ckpt.labels[i] for i in ids])
    return preds


def predict_entities(ckpt: Checkpoint, doc: Document, max_len: int = 512) -> list[Span]:
    """Entity spans (tag, first word, end word exclusive) over the reading-ordered words."""
    seq = tokenize(prepare_document(doc), ckpt.vocab, ckpt.one_d_mode, ckpt.two_d_mode, max_len)
    return bio_decode(predict_word_labels(ckpt, [seq])[0])


def entity_tags(labels: Sequence[str]) -> list[str]:
    seen = []
    for l in labels:
        if l != "O" and l[2:] not in seen:
            seen.append(l[2:])
    return seen


def evaluate_entities(ckpt: Checkpoint, docs: Sequence[Document], p_swap: float = 0.0, seed: int = 0,
                      max_len: int = 512) -> dict[str, EvalReport]:
    """Word- and entity-level reports, optionally under segment swap.

    Predictions made on the (possibly perturbed) serialization are mapped back to
    the reading-ordered words before span decoding, so gold and predicted spans
    share one coordinate system.
    """
    canon_seqs, run_seqs = [], []
    for d in docs:
        canon = prepare_document(d)
        canon_seqs.append(tokenize(canon, ckpt.vocab, ckpt.one_d_mode, ckpt.two_d_mode, max_len))
        run = segment_swap(canon, p_swap, derive_seed(seed, "swap", d.doc_id)) if p_swap > 0 else canon
        run_seqs.append(tokenize(run, ckpt.vocab, ckpt.one_d_mode, ckpt.two_d_mode, max_len))
    preds = predict_word_labels(ckpt, run_seqs)
    gold_spans, pred_spans = [], []
    for canon, run, pred in zip(canon_seqs, run_seqs, preds):
        by_key = dict(zip(word_keys(run), pred))
        ordered = [by_key.get(k, "O") for k in word_keys(canon)]
        gold_spans.append(bio_decode(bio_encode(canon.word_labels)))
        pred_spans.append(bio_decode(ordered))
    tags = entity_tags(ckpt.labels)
    return {level: f1(gold_spans, pred_spans, level, tags) for level in ("word", "entity")}


def evaluate_classification(ckpt: Checkpoint, docs: Sequence[Document], max_len: int = 512) -> AccuracyReport:
    if ckpt.task != "classification":
        raise ValueError("checkpoint is not fine-tuned for classification")
    seqs = encode_corpus(docs, ckpt.vocab, ckpt.one_d_mode, ckpt.two_d_mode, max_len)
    gold = []
    for s in seqs:
        if s.doc_class is None:
            raise ValueError(f"{s.doc_id}: no document class to evaluate against")
        gold.append(s.doc_class)
    pred = [ckpt.labels[int(l.argmax())] for l in _logits(ckpt, seqs)]
    return accuracy(gold, pred)
