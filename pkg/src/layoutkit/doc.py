"""Document model, coordinate normalization, reading order, positions and tokenization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

BINS = 1000
CHUNK_SIZE = 3

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)

ONE_D_MODES = ("global", "local")
TWO_D_MODES = ("word", "segment")


class ValidationError(ValueError):
    """A document violates a structural or geometric invariant."""


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValidationError(f"inverted box {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def quantize(self) -> tuple[int, int, int, int]:
        """Integer bins in [0, 1000] for a box already normalized to [0, 1]."""
        return tuple(int(v) for v in quantize(np.array(self.as_list())))

    @classmethod
    def dequantize(cls, q: Sequence[int]) -> "BBox":
        return cls(*(float(v) / BINS for v in q))

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x1, other.x1), min(self.y1, other.y1),
                    max(self.x2, other.x2), max(self.y2, other.y2))

    def contains(self, other: "BBox", tol: float = 0.0) -> bool:
        return (other.x1 >= self.x1 - tol and other.y1 >= self.y1 - tol
                and other.x2 <= self.x2 + tol and other.y2 <= self.y2 + tol)


ZERO_BOX = BBox(0.0, 0.0, 0.0, 0.0)


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * BINS), 0, BINS).astype(np.int64)


def union_box(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    out = boxes[0]
    for b in boxes[1:]:
        out = out.union(b)
    return out


@dataclass(frozen=True)
class Word:
    text: str
    box: BBox
    label: Optional[str] = None
    position: Optional[int] = None

    def __post_init__(self):
        if not self.text or any(c.isspace() for c in self.text):
            raise ValidationError(f"bad word text {self.text!r}")


@dataclass(frozen=True)
class Segment:
    words: tuple[Word, ...]
    box: BBox
    segment_id: int

    def __post_init__(self):
        if not self.words:
            raise ValidationError(f"segment {self.segment_id} has no words")


@dataclass(frozen=True)
class Document:
    doc_id: str
    page_width: float
    page_height: float
    segments: tuple[Segment, ...]
    doc_class: Optional[str] = None
    normalized: bool = False

    @property
    def words(self) -> list[Word]:
        return [w for s in self.segments for w in s.words]

    def validate(self) -> "Document":
        if not self.segments:
            raise ValidationError(f"{self.doc_id}: no segments")
        if self.page_width <= 0 or self.page_height <= 0:
            raise ValidationError(f"{self.doc_id}: page dimensions must be positive")
        w_lim, h_lim = (1.0, 1.0) if self.normalized else (self.page_width, self.page_height)
        tol_x, tol_y = w_lim / BINS, h_lim / BINS
        ids = set()
        for seg in self.segments:
            if seg.segment_id in ids:
                raise ValidationError(f"{self.doc_id}: duplicate segment id {seg.segment_id}")
            ids.add(seg.segment_id)
            for box in [seg.box] + [w.box for w in seg.words]:
                if box.x1 < 0 or box.y1 < 0 or box.x2 > w_lim or box.y2 > h_lim:
                    raise ValidationError(f"{self.doc_id}: box {box.as_list()} outside page")
            union = union_box(w.box for w in seg.words)
            if not (union.x1 >= seg.box.x1 - tol_x and union.x2 <= seg.box.x2 + tol_x
                    and union.y1 >= seg.box.y1 - tol_y and union.y2 <= seg.box.y2 + tol_y):
                raise ValidationError(
                    f"{self.doc_id}: segment {seg.segment_id} box does not contain its words")
        return self


# ---------------------------------------------------------------------------
# corpus I/O


def document_from_dict(obj: dict) -> Document:
    def box(v):
        if not isinstance(v, list) or len(v) != 4:
            raise ValidationError(f"box must be a list of 4 numbers, got {v!r}")
        return BBox(*(float(c) for c in v))

    doc_id = str(obj["doc_id"])
    try:
        segments = tuple(
            Segment(
                words=tuple(Word(w["text"], box(w["box"]), w.get("label")) for w in s["words"]),
                box=box(s["box"]),
                segment_id=i,
            )
            for i, s in enumerate(obj["segments"])
        )
        doc = Document(doc_id, float(obj["page_width"]), float(obj["page_height"]),
                       segments, obj.get("class"))
        return doc.validate()
    except ValidationError as exc:
        msg = str(exc)
        if not msg.startswith(doc_id):
            msg = f"{doc_id}: {msg}"
        raise ValidationError(msg) from None


def document_to_dict(doc: Document) -> dict:
    out = {"doc_id": doc.doc_id, "page_width": doc.page_width, "page_height": doc.page_height}
    if doc.doc_class is not None:
        out["class"] = doc.doc_class
    segs = sorted(doc.segments, key=lambda s: s.segment_id)
    out["segments"] = [
        {
            "box": s.box.as_list(),
            "words": [
                {"text": w.text, "box": w.box.as_list(), **({"label": w.label} if w.label else {})}
                for w in s.words
            ],
        }
        for s in segs
    ]
    return out


def load_corpus(path) -> list[Document]:
    """Read a JSONL corpus; each line is one document in pixel coordinates."""
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "doc_id" not in obj:
                raise ValidationError(f"line {lineno}: not a document object")
            try:
                doc = document_from_dict(obj)
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"line {lineno}: missing or bad field {exc}") from None
            if doc.doc_id in seen:
                raise ValidationError(f"line {lineno}: duplicate doc_id {doc.doc_id}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def dumps_corpus(docs: Sequence[Document]) -> str:
    return "".join(json.dumps(document_to_dict(d), separators=(",", ":")) + "\n" for d in docs)


def save_corpus(docs: Sequence[Document], path) -> None:
    Path(path).write_text(dumps_corpus(docs), encoding="utf-8")


# ---------------------------------------------------------------------------
# geometry and order


def normalize_document(doc: Document) -> Document:
    """Express every box as fractions of the page; quantized bins come from ``BBox.quantize``."""
    if doc.page_width <= 0 or doc.page_height <= 0:
        raise ValidationError(f"{doc.doc_id}: page dimensions must be positive")
    if doc.normalized:
        return doc
    sx, sy = 1.0 / doc.page_width, 1.0 / doc.page_height

    def norm(b: BBox) -> BBox:
        return BBox(min(b.x1 * sx, 1.0), min(b.y1 * sy, 1.0), min(b.x2 * sx, 1.0), min(b.y2 * sy, 1.0))

    segments = tuple(
        replace(s, box=norm(s.box), words=tuple(replace(w, box=norm(w.box)) for w in s.words))
        for s in doc.segments
    )
    return replace(doc, segments=segments, normalized=True)


def same_line(a: BBox, b: BBox) -> bool:
    overlap = min(a.y2, b.y2) - max(a.y1, b.y1)
    smaller = min(a.y2 - a.y1, b.y2 - b.y1)
    if smaller <= 0:
        return overlap >= 0 and a.y1 == b.y1
    return overlap > 0.5 * smaller


def group_lines(segments: Sequence[Segment]) -> list[list[int]]:
    """Indices of ``segments`` grouped into lines, top-to-bottom, each line left-to-right.

    Line membership is the transitive closure of the pairwise y-overlap test.
    """
    n = len(segments)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if same_line(segments[i].box, segments[j].box):
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    def mean_y(idx):
        return sum((segments[i].box.y1 + segments[i].box.y2) / 2 for i in idx) / len(idx)

    lines = sorted(groups.values(), key=lambda idx: (mean_y(idx), min(idx)))
    return [sorted(idx, key=lambda i: (segments[i].box.x1, i)) for idx in lines]


def order_segments(doc: Document) -> Document:
    """Serialize segments top-down, left-right (the reading-order rule)."""
    order = [i for line in group_lines(doc.segments) for i in line]
    return replace(doc, segments=tuple(doc.segments[i] for i in order))


def prepare_document(doc: Document) -> Document:
    return order_segments(normalize_document(doc))


def assign_positions(doc: Document, one_d_mode: str) -> Document:
    """Attach 1D positions to words along the document's segment serialization.

    Documents coming out of ``prepare_document`` are serialized by the reading-order
    rule; perturbed serializations (segment swap) are numbered as given.
    """
    if one_d_mode not in ONE_D_MODES:
        raise ValueError(f"unknown 1D mode {one_d_mode!r}")
    counter = 0
    segments = []
    for seg in doc.segments:
        words = []
        for k, w in enumerate(seg.words, start=1):
            counter += 1
            words.append(replace(w, position=counter if one_d_mode == "global" else k))
        segments.append(replace(seg, words=tuple(words)))
    return replace(doc, segments=tuple(segments))


# ---------------------------------------------------------------------------
# tokenization


def chunk_word(text: str, size: int = CHUNK_SIZE) -> list[str]:
    return [text[i:i + size] for i in range(0, len(text), size)]


class Vocabulary:
    """Closed vocabulary of fixed-width word chunks plus special tokens."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = list(SPECIAL_TOKENS)
        for t in tokens:
            if t not in SPECIAL_TOKENS:
                self.itos.append(t)
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        chunks = sorted({c for w in words for c in chunk_word(w)})
        return cls(chunks)

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @property
    def pad_id(self):
        return self.stoi[PAD]

    @property
    def cls_id(self):
        return self.stoi[CLS]

    @property
    def sep_id(self):
        return self.stoi[SEP]

    @property
    def mask_id(self):
        return self.stoi[MASK]

    @property
    def unk_id(self):
        return self.stoi[UNK]

    @property
    def num_special(self):
        return len(SPECIAL_TOKENS)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must start with the special tokens")
        return cls(itos[len(SPECIAL_TOKENS):])


@dataclass
class TokenSequence:
    """Flat token stream with word/segment alignment.

    Word and segment indices point into ``word_boxes``/``segment_boxes``; specials carry -1.
    Boxes are floats in [0, 1]; ``qbox`` gives the quantized bins fed to the model.
    """

    doc_id: str
    tokens: np.ndarray
    word_index: np.ndarray
    segment_index: np.ndarray
    pos_1d: np.ndarray
    box_2d: np.ndarray
    special_mask: np.ndarray
    word_texts: list[str]
    word_boxes: np.ndarray
    word_segment: np.ndarray
    word_positions: np.ndarray
    segment_boxes: np.ndarray
    segment_ids: np.ndarray
    one_d_mode: str
    two_d_mode: str
    word_labels: list[Optional[str]] = field(default_factory=list)
    doc_class: Optional[str] = None

    def __len__(self):
        return len(self.tokens)

    @property
    def num_words(self) -> int:
        return len(self.word_texts)

    @property
    def qbox(self) -> np.ndarray:
        return quantize(self.box_2d)

    def first_token_positions(self) -> np.ndarray:
        """Token position of each word's first token, indexed by word."""
        firsts = np.full(self.num_words, -1, dtype=np.int64)
        for t in range(len(self.tokens) - 1, -1, -1):
            w = self.word_index[t]
            if w >= 0:
                firsts[w] = t
        return firsts

    def copy(self) -> "TokenSequence":
        return replace(
            self,
            **{k: getattr(self, k).copy() for k in (
                "tokens", "word_index", "segment_index", "pos_1d", "box_2d", "special_mask",
                "word_boxes", "word_segment", "word_positions", "segment_boxes", "segment_ids")},
            word_texts=list(self.word_texts),
            word_labels=list(self.word_labels),
        )


def tokenize(doc: Document, vocab: Vocabulary, one_d_mode: str = "local",
             two_d_mode: str = "segment", max_len: int = 512) -> TokenSequence:
    """Serialize a normalized document into tokens.

    Words are split into fixed-width chunks; CLS/SEP frame the sequence. Whole trailing
    segments are dropped until the sequence fits ``max_len``.
    """
    if not doc.normalized:
        raise ValueError(f"{doc.doc_id}: tokenize requires a normalized document")
    doc = assign_positions(doc, one_d_mode)
    budget = max_len - 2
    kept = []
    used = 0
    for seg in doc.segments:
        n = sum(len(chunk_word(w.text)) for w in seg.words)
        if used + n > budget:
            break
        kept.append(seg)
        used += n
    if not kept:
        raise ValueError(f"{doc.doc_id}: empty after truncation to max_len={max_len}")

    tokens = [vocab.cls_id]
    word_index = [-1]
    segment_index = [-1]
    pos = [0]
    word_texts, word_boxes, word_segment, word_positions, word_labels = [], [], [], [], []
    for s_idx, seg in enumerate(kept):
        for w in seg.words:
            w_idx = len(word_texts)
            word_texts.append(w.text)
            word_boxes.append(w.box.as_list())
            word_segment.append(s_idx)
            word_positions.append(w.position)
            word_labels.append(w.label)
            for c in chunk_word(w.text):
                tokens.append(vocab[c])
                word_index.append(w_idx)
                segment_index.append(s_idx)
                pos.append(w.position)
    tokens.append(vocab.sep_id)
    word_index.append(-1)
    segment_index.append(-1)
    pos.append(max(word_positions) + 1 if one_d_mode == "global" else 0)

    seq = TokenSequence(
        doc_id=doc.doc_id,
        tokens=np.array(tokens, dtype=np.int64),
        word_index=np.array(word_index, dtype=np.int64),
        segment_index=np.array(segment_index, dtype=np.int64),
        pos_1d=np.array(pos, dtype=np.int64),
        box_2d=np.zeros((len(tokens), 4)),
        special_mask=np.array(word_index) < 0,
        word_texts=word_texts,
        word_boxes=np.array(word_boxes, dtype=np.float64).reshape(-1, 4),
        word_segment=np.array(word_segment, dtype=np.int64),
        word_positions=np.array(word_positions, dtype=np.int64),
        segment_boxes=np.array([s.box.as_list() for s in kept], dtype=np.float64),
        segment_ids=np.array([s.segment_id for s in kept], dtype=np.int64),
        one_d_mode=one_d_mode,
        two_d_mode=two_d_mode,
        word_labels=word_labels,
        doc_class=doc.doc_class,
    )
    return resolve_token_boxes(seq, two_d_mode)


def resolve_token_boxes(seq: TokenSequence, two_d_mode: str) -> TokenSequence:
    if two_d_mode not in TWO_D_MODES:
        raise ValueError(f"unknown 2D mode {two_d_mode!r}")
    out = seq.copy()
    out.two_d_mode = two_d_mode
    real = ~out.special_mask
    out.box_2d = np.zeros((len(out.tokens), 4))
    if two_d_mode == "word":
        out.box_2d[real] = out.word_boxes[out.word_index[real]]
    else:
        out.box_2d[real] = out.segment_boxes[out.segment_index[real]]
    return out
