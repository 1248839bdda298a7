"""Seeded MLM mask plans (naive, whole-word, layout-aware) and masked-position selections."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .doc import BINS, TokenSequence, Vocabulary, resolve_token_boxes, union_box, BBox

STRATEGIES = ("naive", "wwm", "wwm_lam")
IGNORE = -100

# per-token MLM actions
ACT_NONE, ACT_MASK, ACT_RANDOM, ACT_KEEP = 0, 1, 2, 3
ACTION_NAMES = {ACT_NONE: "", ACT_MASK: "mask", ACT_RANDOM: "random", ACT_KEEP: "keep"}


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts (global seed, doc id, step, ...)."""
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(frozen=True)
class ReplacementPolicy:
    mask: float = 0.8
    random: float = 0.1
    keep: float = 0.1

    def __post_init__(self):
        fracs = (self.mask, self.random, self.keep)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"replacement fractions must be non-negative and sum to 1, got {fracs}")


@dataclass
class MlmPlan:
    strategy: str
    masked: np.ndarray          # bool per token
    labels: np.ndarray          # original ids at masked positions, IGNORE elsewhere
    word_masked: np.ndarray     # bool per word: any of its tokens masked

    @property
    def masked_token_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)

    @property
    def num_masked(self) -> int:
        return int(self.masked.sum())


@dataclass
class MpmSelection:
    selected_word_ids: list[int]
    pseudo_heights: list[int]
    target_boxes: np.ndarray    # [N, 4] original word boxes in [0, 1]

    def __len__(self):
        return len(self.selected_word_ids)


@dataclass
class MaskedSequence:
    """A training example: the (possibly re-segmented) sequence plus its MLM and MPM targets."""

    seq: TokenSequence
    mlm_labels: np.ndarray
    actions: np.ndarray
    box_labels: np.ndarray      # [L, 4]; NaN rows are ignored
    selection: Optional[MpmSelection] = None

    @property
    def box_label_mask(self) -> np.ndarray:
        return ~np.isnan(self.box_labels[:, 0])


def boundary_words(seq: TokenSequence) -> np.ndarray:
    """Words that are first or last in their segment."""
    ws = seq.word_segment
    first = np.ones(len(ws), dtype=bool)
    last = np.ones(len(ws), dtype=bool)
    if len(ws) > 1:
        first[1:] = ws[1:] != ws[:-1]
        last[:-1] = ws[:-1] != ws[1:]
    return first | last


def word_mask_probabilities(seq: TokenSequence, strategy: str, p_mlm: float) -> np.ndarray:
    probs = np.full(seq.num_words, p_mlm)
    if strategy == "wwm_lam":
        probs[boundary_words(seq)] = min(3.0 * p_mlm, 1.0)
    return probs


def plan_mlm(seq: TokenSequence, strategy: str, p_mlm: float, seed: int) -> MlmPlan:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown masking strategy {strategy!r}")
    if not 0.0 < p_mlm < 1.0:
        raise ValueError(f"p_mlm must be in (0, 1), got {p_mlm}")
    rng = np.random.default_rng(seed)
    real = ~seq.special_mask
    if strategy == "naive":
        masked = (rng.random(len(seq.tokens)) < p_mlm) & real
    else:
        chosen = rng.random(seq.num_words) < word_mask_probabilities(seq, strategy, p_mlm)
        masked = np.zeros(len(seq.tokens), dtype=bool)
        masked[real] = chosen[seq.word_index[real]]
    labels = np.where(masked, seq.tokens, IGNORE)
    word_masked = np.zeros(seq.num_words, dtype=bool)
    word_masked[seq.word_index[masked]] = True
    return MlmPlan(strategy, masked, labels, word_masked)


def apply_mlm(seq: TokenSequence, plan: MlmPlan, vocab: Vocabulary,
              policy: ReplacementPolicy = ReplacementPolicy(), seed: int = 0) -> MaskedSequence:
    """Replace planned tokens; one action per word (per token for the naive strategy)."""
    if len(plan.masked) != len(seq.tokens):
        raise ValueError(f"plan length {len(plan.masked)} != sequence length {len(seq.tokens)}")
    rng = np.random.default_rng(seed)
    out = seq.copy()
    actions = np.zeros(len(seq.tokens), dtype=np.int64)
    idx = plan.masked_token_indices
    if plan.strategy == "naive":
        unit_of = np.arange(len(idx))
        n_units = len(idx)
    else:
        words = seq.word_index[idx]
        uniq, unit_of = np.unique(words, return_inverse=True)
        n_units = len(uniq)
    u = rng.random(n_units)
    unit_action = np.where(u < policy.mask, ACT_MASK,
                           np.where(u < policy.mask + policy.random, ACT_RANDOM, ACT_KEEP))
    actions[idx] = unit_action[unit_of]
    random_ids = rng.integers(vocab.num_special, len(vocab), size=len(idx))
    tok = out.tokens
    tok[idx] = np.where(actions[idx] == ACT_MASK, vocab.mask_id,
                        np.where(actions[idx] == ACT_RANDOM, random_ids, tok[idx]))
    box_labels = np.full((len(seq.tokens), 4), np.nan)
    return MaskedSequence(out, plan.labels.copy(), actions, box_labels)


def select_mpm(seq: TokenSequence, p_mpm: float, seed: int,
               exclude_words: Optional[np.ndarray] = None) -> MpmSelection:
    """Pick distinct words for box prediction; MLM-masked words are never eligible."""
    if not 0.0 < p_mpm < 1.0:
        raise ValueError(f"p_mpm must be in (0, 1), got {p_mpm}")
    rng = np.random.default_rng(seed)
    boxes = seq.word_boxes
    eligible = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    if exclude_words is not None:
        eligible &= ~np.asarray(exclude_words, dtype=bool)
    draws = rng.random(seq.num_words) < p_mpm
    chosen = np.flatnonzero(draws & eligible)
    if len(chosen) > BINS:
        raise ValueError("more selected words than distinct pseudo heights")
    heights = rng.choice(BINS, size=len(chosen), replace=False) + 1
    return MpmSelection([int(w) for w in chosen], [int(h) for h in heights],
                        boxes[chosen].copy().reshape(-1, 4))


def split_segments(seq: TokenSequence, sel: MpmSelection) -> TokenSequence:
    """Isolate each selected word into a one-word segment piece.

    Flanking runs become pieces with fresh ids and tight boxes; local positions
    restart inside every piece. Untouched segments keep id and box.
    """
    selected = set(sel.selected_word_ids)
    if any(w < 0 or w >= seq.num_words for w in selected):
        raise ValueError(f"{seq.doc_id}: selection references a word not in the sequence")
    out = seq.copy()
    if not selected:
        return out
    next_id = int(seq.segment_ids.max()) + 1
    new_word_segment = np.empty_like(seq.word_segment)
    boxes, ids = [], []
    for s in range(len(seq.segment_boxes)):
        members = np.flatnonzero(seq.word_segment == s)
        if not selected.intersection(members.tolist()):
            new_word_segment[members] = len(ids)
            boxes.append(seq.segment_boxes[s])
            ids.append(seq.segment_ids[s])
            continue
        pieces: list[list[int]] = []
        for w in members.tolist():
            if w in selected or not pieces or pieces[-1][-1] in selected:
                pieces.append([w])
            else:
                pieces[-1].append(w)
        for piece in pieces:
            new_word_segment[piece] = len(ids)
            boxes.append(union_box(BBox(*seq.word_boxes[w]) for w in piece).as_list())
            ids.append(next_id)
            next_id += 1
    out.word_segment = new_word_segment
    out.segment_boxes = np.array(boxes, dtype=np.float64)
    out.segment_ids = np.array(ids, dtype=np.int64)
    real = ~out.special_mask
    out.segment_index[real] = new_word_segment[out.word_index[real]]
    if out.one_d_mode == "local":
        pos = np.empty(seq.num_words, dtype=np.int64)
        for w in range(seq.num_words):
            pos[w] = 1 if w == 0 or new_word_segment[w] != new_word_segment[w - 1] else pos[w - 1] + 1
        out.word_positions = pos
        out.pos_1d[real] = pos[out.word_index[real]]
    return resolve_token_boxes(out, out.two_d_mode)


def apply_box_masks(seq: TokenSequence, sel: MpmSelection) -> tuple[TokenSequence, np.ndarray]:
    """Give selected words the pseudo box [0, 0, 0, n]; labels sit on each word's first token."""
    if len(set(sel.pseudo_heights)) != len(sel.pseudo_heights):
        raise ValueError("duplicate pseudo heights in MPM selection")
    out = seq.copy()
    labels = np.full((len(seq.tokens), 4), np.nan)
    firsts = seq.first_token_positions()
    for w, n, target in zip(sel.selected_word_ids, sel.pseudo_heights, sel.target_boxes):
        out.box_2d[seq.word_index == w] = (0.0, 0.0, 0.0, n / BINS)
        labels[firsts[w]] = target
    return out, labels


def build_example(seq: TokenSequence, vocab: Vocabulary, strategy: str, p_mlm: float,
                  seed: int, enable_mpm: bool = False, p_mpm: float = 0.15,
                  policy: ReplacementPolicy = ReplacementPolicy()) -> MaskedSequence:
    """MLM plan first, then MPM over the remaining words, then box split and box masking."""
    plan = plan_mlm(seq, strategy, p_mlm, derive_seed(seed, "mlm"))
    ex = apply_mlm(seq, plan, vocab, policy, derive_seed(seed, "replace"))
    if enable_mpm:
        sel = select_mpm(seq, p_mpm, derive_seed(seed, "mpm"), exclude_words=plan.word_masked)
        split = split_segments(ex.seq, sel)
        ex.seq, ex.box_labels = apply_box_masks(split, sel)
        ex.selection = sel
    return ex


def plan_to_record(ex: MaskedSequence) -> dict:
    """JSON-friendly dump of one example's masking decisions."""
    sel = ex.selection
    return {
        "doc_id": ex.seq.doc_id,
        "mlm_positions": np.flatnonzero(ex.mlm_labels != IGNORE).tolist(),
        "actions": [ACTION_NAMES[int(a)] for a in ex.actions],
        "mpm_words": sel.selected_word_ids if sel else [],
        "pseudo_heights": sel.pseudo_heights if sel else [],
    }
