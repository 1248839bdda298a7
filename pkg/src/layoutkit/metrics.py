"""BIO span decoding and word/entity-level F1."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

OUTSIDE = "O"

Span = tuple[str, int, int]  # (tag, start word, end word exclusive)


def bio_labels(tags: Sequence[str]) -> list[str]:
    return [OUTSIDE] + [f"{p}-{t}" for t in tags for p in ("B", "I")]


def bio_encode(word_tags: Sequence) -> list[str]:
    """Raw per-word tags (None for outside) to BIO; a run of one tag is one entity."""
    out, prev = [], None
    for t in word_tags:
        if t is None:
            out.append(OUTSIDE)
        else:
            out.append(("I-" if t == prev else "B-") + t)
        prev = t
    return out


def bio_decode(labels: Sequence[str]) -> list[Span]:
    """Spans from BIO labels; an I- that does not continue a same-tag span opens a new one."""
    spans: list[Span] = []
    tag, start = None, 0
    for i, lab in enumerate(labels):
        if lab == OUTSIDE or lab is None:
            if tag is not None:
                spans.append((tag, start, i))
            tag = None
            continue
        prefix, t = lab.split("-", 1)
        if prefix == "B" or t != tag:
            if tag is not None:
                spans.append((tag, start, i))
            tag, start = t, i
    if tag is not None:
        spans.append((tag, start, len(labels)))
    return spans


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def gold(self) -> int:
        return self.tp + self.fn

    def add(self, other: "Counts"):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    level: str
    per_tag: dict[str, Counts] = field(default_factory=dict)

    @property
    def overall(self) -> Counts:
        total = Counts()
        for c in self.per_tag.values():
            total.add(c)
        return total

    def f1_row(self) -> dict[str, float]:
        row = {t: c.f1 for t, c in self.per_tag.items()}
        row["overall"] = self.overall.f1
        return row

    def to_dict(self) -> dict:
        return {"level": self.level, "per_tag": {t: c.to_dict() for t, c in self.per_tag.items()},
                "overall": self.overall.to_dict()}


def _spans_to_words(spans: Iterable[Span], n: int) -> list:
    tags = [None] * n
    for t, s, e in spans:
        for i in range(s, e):
            tags[i] = t
    return tags


def f1(gold: Sequence[Sequence[Span]], pred: Sequence[Sequence[Span]], level: str = "entity",
       tags: Sequence[str] = ()) -> EvalReport:
    """Micro P/R/F1 per tag over a document set.

    ``gold[d]`` and ``pred[d]`` are the spans of document ``d``. Entity level counts exact
    (tag, start, end) matches; word level compares per-word tags, ignoring outside words.
    """
    if len(gold) != len(pred):
        raise ValueError("gold and predicted span lists cover different document counts")
    if level not in ("entity", "word"):
        raise ValueError(f"unknown level {level!r}")
    report = EvalReport(level, {t: Counts() for t in tags})

    def counts(t):
        return report.per_tag.setdefault(t, Counts())

    for g_spans, p_spans in zip(gold, pred):
        if level == "entity":
            g_set, p_set = set(map(tuple, g_spans)), set(map(tuple, p_spans))
            for s in g_set & p_set:
                counts(s[0]).tp += 1
            for s in p_set - g_set:
                counts(s[0]).fp += 1
            for s in g_set - p_set:
                counts(s[0]).fn += 1
        else:
            n = max([e for _, _, e in list(g_spans) + list(p_spans)], default=0)
            g_words, p_words = _spans_to_words(g_spans, n), _spans_to_words(p_spans, n)
            for g, p in zip(g_words, p_words):
                if g is not None and g == p:
                    counts(g).tp += 1
                    continue
                if p is not None:
                    counts(p).fp += 1
                if g is not None:
                    counts(g).fn += 1
    return report


@dataclass
class AccuracyReport:
    correct: dict[str, int] = field(default_factory=dict)
    total: dict[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        n = sum(self.total.values())
        return sum(self.correct.values()) / n if n else 0.0

    def per_class(self) -> dict[str, float]:
        return {c: self.correct.get(c, 0) / n for c, n in self.total.items() if n}

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_class": self.per_class(), "total": dict(self.total)}


def accuracy(gold: Sequence[str], pred: Sequence[str]) -> AccuracyReport:
    rep = AccuracyReport()
    for g, p in zip(gold, pred):
        rep.total[g] = rep.total.get(g, 0) + 1
        rep.correct[g] = rep.correct.get(g, 0) + int(g == p)
    return rep
