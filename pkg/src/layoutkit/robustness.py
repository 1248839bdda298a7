"""Segment-swap perturbation of a document's serialization."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .doc import Document, group_lines


def segment_swap(doc: Document, p_swap: float, seed: int) -> Document:
    """Reverse the segment order of randomly chosen lines.

    Every line draws one uniform number and is reversed when it falls below
    ``p_swap``, so the swapped set for a larger ``p_swap`` contains the set for a
    smaller one under the same seed. Boxes and words are untouched; only the
    serialization order changes.
    """
    if not 0.0 <= p_swap <= 1.0:
        raise ValueError(f"p_swap must be in [0, 1], got {p_swap}")
    lines = group_lines(doc.segments)
    draws = np.random.default_rng(seed).random(len(lines))
    order = list(range(len(doc.segments)))
    changed = False
    for line, u in zip(lines, draws):
        if len(line) < 2 or u >= p_swap:
            continue
        slots = sorted(order.index(i) for i in line)
        members = [order[s] for s in slots]
        for s, i in zip(slots, reversed(members)):
            order[s] = i
        changed = True
    if not changed:
        return doc
    return replace(doc, segments=tuple(doc.segments[i] for i in order))


DEFAULT_P_SWAPS = (0.0, 0.1, 0.2, 0.3)


@dataclass
class RobustnessTable:
    rows: list = field(default_factory=list)   # {"p_swap", "word": {...}, "entity": {...}}

    def overall(self, level: str = "entity") -> list[float]:
        return [r[level]["overall"] for r in self.rows]

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.rows:
            w.writerow(["p_swap", "level"])
            return buf.getvalue()
        cols = list(self.rows[0]["entity"])
        w.writerow(["p_swap", "level"] + cols)
        for r in self.rows:
            for level in ("word", "entity"):
                w.writerow([r["p_swap"], level] + [repr(r[level][c]) for c in cols])
        return buf.getvalue()


def robustness_report(ckpt, docs: Sequence[Document], p_swaps: Sequence[float] = DEFAULT_P_SWAPS,
                      seed: int = 0, max_len: int = 512) -> RobustnessTable:
    """Word- and entity-level F1 rows, one per swap probability, on a fine-tuned entity model."""
    from .train import evaluate_entities

    table = RobustnessTable()
    for p in p_swaps:
        reports = evaluate_entities(ckpt, docs, p_swap=float(p), seed=seed, max_len=max_len)
        table.rows.append({"p_swap": float(p), **{lvl: rep.f1_row() for lvl, rep in reports.items()}})
    return table
