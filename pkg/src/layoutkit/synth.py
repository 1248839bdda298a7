"""Deterministic generator of labeled receipt-like documents.

Documents mimic the difficulties of receipt understanding: a company name and
an address spread over several lines (sometimes split into several segments
on one line), key/value pairs whose value may sit left of or above its key,
and a total whose amount is repeated verbatim by distractor rows.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .doc import BBox, Document, Segment, Word, group_lines, normalize_document
from .masking import derive_seed

COMPANY, ADDRESS, DATE, TOTAL = "COMPANY", "ADDRESS", "DATE", "TOTAL"

# entries may be phrases; a phrase is split on spaces into words of one segment
DEFAULT_LEXICON = {
    "company": [
        "GOLDEN", "MAPLE", "SUNRISE", "EVERGREEN", "PACIFIC", "ORIENT", "HARMONY", "SILVER",
        "CRYSTAL", "EMERALD", "PHOENIX", "LOTUS", "DRAGON", "UNITED", "PREMIER", "ROYAL",
        "VICTORY", "FORTUNE", "LUCKY", "GRAND", "MODERN", "ISLAND", "HIGHLAND", "RIVERSIDE",
    ],
    "company_kind": [
        "TRADING", "HARDWARE", "BAKERY", "STATIONERY", "RESTAURANT", "MART", "PHARMACY",
        "BOOKSTORE", "ELECTRICAL", "FURNITURE", "GROCERY", "KITCHEN",
    ],
    "company_suffix": ["SDN BHD", "ENTERPRISE", "CO", "TRADING CO", "LTD", "PLT"],
    "reg_key": ["CO REG NO", "GST REG NO", "GST ID", "BUSINESS REG"],
    "reg_no": ["123456-X", "884210-K", "530114-A", "001902-D", "716233-W", "402871-P"],
    "street_kind": ["JALAN", "LORONG", "PERSIARAN", "LEBUH", "TAMAN"],
    "street": [
        "MERANTI", "CEMPAKA", "MAWAR", "KENANGA", "SENTOSA", "BAHAGIA", "INDAH", "PERMAI",
        "DAMAI", "MUTIARA", "SETIA", "BAYAN", "DELIMA", "SERI", "PUTRA", "JAYA",
    ],
    "city": [
        "KLANG", "PETALING", "SHAH-ALAM", "AMPANG", "CHERAS", "PUCHONG", "KAJANG", "RAWANG",
        "SEREMBAN", "MELAKA", "IPOH", "KLUANG",
    ],
    "state": ["SELANGOR", "JOHOR", "PERAK", "KEDAH", "PAHANG", "SABAH"],
    "postcode": ["40150", "47100", "43000", "52100", "68000", "81200", "30450", "41050"],
    "house_no": [str(n) for n in range(1, 40)],
    "item": [
        "RICE", "CHICKEN", "NOODLE", "COFFEE", "TEA", "BREAD", "PAPER", "PENCIL", "BOLT",
        "SCREW", "CABLE", "BULB", "SOAP", "SUGAR", "FLOUR", "MILK", "EGG", "TOWEL", "BRUSH",
        "GLUE", "TAPE", "FILE", "CHAIR", "LAMP",
    ],
    "item_kind": ["SMALL", "LARGE", "PACK", "BOX", "SET", "FRESH", "MINI"],
    "qty": [f"X{n}" for n in range(1, 10)],
    "unit": ["PCS", "UNIT", "KG", "BTL"],
    "total_key": ["TOTAL", "GRAND TOTAL", "NETT TOTAL", "TOTAL AMOUNT DUE", "TOTAL INCL GST", "TOTAL PAYABLE"],
    "distractor_key": ["SUBTOTAL", "CASH", "CASH TENDERED", "AMOUNT PAID", "ROUNDED TOTAL", "TOTAL SALES EXCL GST"],
    "misc_key": ["CHANGE", "CHANGE DUE", "SERVICE TAX", "DISCOUNT", "ROUNDING ADJ"],
    "date_key": ["DATE", "INVOICE DATE", "DATE ISSUED", "BILL DATE"],
    "header_key": ["CASHIER ID", "TERMINAL NO", "TABLE NO", "COUNTER NO", "RECEIPT NO"],
    "currency": ["RM"],
}

CLASS_TITLES = {"receipt": "OFFICIAL RECEIPT", "invoice": "TAX INVOICE", "quotation": "QUOTATION"}


def amount_strings() -> list[str]:
    ints = [str(v) for v in range(10, 100, 3)] + [str(v) for v in range(100, 400, 7)]
    return [f"{i}.{c}" for i in ints for c in ("00", "50", "90", "20")]


def date_strings() -> list[str]:
    return [f"{d:02d}/{m:02d}/{y}" for y in (2017, 2018, 2019) for m in range(1, 13)
            for d in range(1, 29)]


def time_strings() -> list[str]:
    return [f"{h:02d}:{m:02d}" for h in range(8, 23) for m in (0, 15, 30, 45)]


@dataclass
class GenSpec:
    doc_count: int = 2000
    splits: tuple = (0.8, 0.1, 0.1)
    page_width: float = 1000.0
    page_height: float = 1400.0
    grid_rows: int = 30
    grid_cols: int = 3
    entity_tags: tuple = (COMPANY, ADDRESS, DATE, TOTAL)
    classes: tuple = ("receipt", "invoice", "quotation")
    multi_segment_prob: float = 0.6       # address spans >= 2 segments
    inline_split_prob: float = 0.5        # a multi-line address line is split into two segments
    distractor_prob: float = 1.0          # total amount repeated by a distractor row
    cross_segment_fraction: float = 0.3   # docs whose values sit left of / above their keys
    vertical_prob: float = 0.25           # key/value pairs stacked vertically
    title_prob: float = 0.8
    box_jitter: float = 3.0
    min_items: int = 1
    max_items: int = 3
    lexicon: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_LEXICON.items()})
    seed: int = 0

    def __post_init__(self):
        self.splits = tuple(self.splits)
        self.entity_tags = tuple(self.entity_tags)
        self.classes = tuple(self.classes)
        if len(self.entity_tags) < 2:
            raise ValueError("need at least two entity tags")
        if self.doc_count < 0:
            raise ValueError("doc_count must be non-negative")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ValueError(f"splits must be three non-negative fractions summing to 1, got {self.splits}")
        for name in ("multi_segment_prob", "inline_split_prob", "distractor_prob",
                     "cross_segment_fraction", "vertical_prob", "title_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 1 <= self.min_items <= self.max_items:
            raise ValueError("need 1 <= min_items <= max_items")
        if self.multi_segment_prob <= 0 and ADDRESS in self.entity_tags:
            raise ValueError("multi_segment_prob must be positive so some entity spans segments")
        if self.page_width <= 0 or self.page_height <= 0:
            raise ValueError("page dimensions must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = list(self.splits)
        d["entity_tags"] = list(self.entity_tags)
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown corpus keys: {sorted(unknown)}")
        return cls(**d)

    def all_words(self) -> list[str]:
        """Every surface string the generator can emit."""
        words = {w for ws in self.lexicon.values() for phrase in ws for w in phrase.split()}
        words.update(amount_strings())
        words.update(date_strings())
        words.update(time_strings())
        words.update(w for t in CLASS_TITLES.values() for w in t.split())
        return sorted(words)


class _Layout:
    """Places rows of segments onto a page grid and emits pixel boxes."""

    CHAR_W, GAP, TEXT_H, ROW_H, TOP, LEFT = 13.0, 12.0, 24.0, 40.0, 50.0, 40.0

    def __init__(self, spec: GenSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.rows: list[list[tuple[int, list[tuple[str, Optional[str]]]]]] = []
        self.gaps: list[float] = []
        self.col_w = (spec.page_width - 2 * self.LEFT) / spec.grid_cols

    def add_row(self, cells: list[tuple[int, list[tuple[str, Optional[str]]]]], gap_after: float = 0.0):
        self.rows.append(cells)
        self.gaps.append(gap_after)

    def word_width(self, text):
        return self.CHAR_W * len(text)

    def render(self, doc_id: str, doc_class: Optional[str]) -> Document:
        spec, rng = self.spec, self.rng
        if len(self.rows) > spec.grid_rows:
            raise ValueError(f"{doc_id}: layout needs {len(self.rows)} rows, grid has {spec.grid_rows}")
        if self.TOP + self.ROW_H * (len(self.rows) + sum(self.gaps)) > spec.page_height:
            raise ValueError(f"{doc_id}: layout does not fit the page height")
        if any(col >= spec.grid_cols for row in self.rows for col, _ in row):
            raise ValueError(f"{doc_id}: layout needs more columns than the grid provides")
        segments = []
        y = self.TOP
        for row, gap in zip(self.rows, self.gaps):
            for col, words in row:
                jx, jy = rng.uniform(-spec.box_jitter, spec.box_jitter, size=2)
                x = self.LEFT + col * self.col_w + 10.0 + jx
                top = y + jy
                out_words = []
                for text, tag in words:
                    w = self.word_width(text)
                    right = min(x + w, spec.page_width)
                    out_words.append(Word(text, BBox(round(x, 2), round(top, 2), round(right, 2),
                                                     round(top + self.TEXT_H, 2)), tag))
                    x = right + self.GAP
                ux1 = min(w.box.x1 for w in out_words)
                ux2 = max(w.box.x2 for w in out_words)
                box = BBox(round(max(ux1 - 2.0, 0.0), 2), round(max(top - 2.0, 0.0), 2),
                           round(min(ux2 + 2.0, spec.page_width), 2),
                           round(min(top + self.TEXT_H + 2.0, spec.page_height), 2))
                segments.append((tuple(out_words), box))
            y += self.ROW_H * (1.0 + gap)
        order = rng.permutation(len(segments))
        segs = tuple(Segment(segments[k][0], segments[k][1], i) for i, k in enumerate(order))
        return Document(doc_id, spec.page_width, spec.page_height, segs, doc_class).validate()


def _pick(rng, xs):
    return xs[int(rng.integers(len(xs)))]


def _tagged(words, tag):
    return [(w, tag) for w in words]


def generate_document(spec: GenSpec, index: int) -> Document:
    rng = np.random.default_rng(derive_seed(spec.seed, "doc", index))
    lex = spec.lexicon
    tags = set(spec.entity_tags)
    lay = _Layout(spec, rng)
    doc_class = _pick(rng, list(spec.classes)) if spec.classes else None
    amounts, dates = amount_strings(), date_strings()

    def tag(name):
        return name if name in tags else None

    def phrase(key):
        return _pick(rng, lex[key]).split()

    def key_value(key_words, value_words, reverse, vertical, col=0):
        key_cell = _tagged(key_words, None)
        if vertical:
            first, second = (value_words, key_cell) if reverse else (key_cell, value_words)
            lay.add_row([(col, first)])
            lay.add_row([(col, second)], gap_after=0.6)
        elif reverse:
            lay.add_row([(col, value_words), (col + 1, key_cell)])
        else:
            lay.add_row([(col, key_cell), (col + 1, value_words)])

    reverse_doc = rng.random() < spec.cross_segment_fraction
    currency = phrase("currency") if rng.random() < 0.5 else []

    if doc_class in CLASS_TITLES and rng.random() < spec.title_prob:
        lay.add_row([(1, _tagged(CLASS_TITLES[doc_class].split(), None))])

    # company: one or two lines
    name = [_pick(rng, lex["company"]), _pick(rng, lex["company_kind"])]
    if rng.random() < 0.5:
        name.insert(0, _pick(rng, lex["company"]))
    suffix = phrase("company_suffix")
    multi = rng.random() < spec.multi_segment_prob
    if multi and rng.random() < 0.3:
        lay.add_row([(0, _tagged(name, tag(COMPANY)))])
        lay.add_row([(0, _tagged(suffix, tag(COMPANY)))])
    else:
        lay.add_row([(0, _tagged(name + suffix, tag(COMPANY)))])
    if rng.random() < 0.7:
        lay.add_row([(0, _tagged(phrase("reg_key") + phrase("reg_no"), None))])

    # address: one line, or several lines possibly split into two segments
    street = [_pick(rng, lex["house_no"]), _pick(rng, lex["street_kind"]), _pick(rng, lex["street"])]
    if rng.random() < 0.5:
        street.insert(0, "NO")
    area = [_pick(rng, lex["postcode"]), _pick(rng, lex["city"])]
    state = [_pick(rng, lex["state"])]
    a = tag(ADDRESS)
    if multi:
        lines = [street, area + state] if rng.random() < 0.5 else [street, area, state]
        for words in lines:
            if len(words) >= 2 and rng.random() < spec.inline_split_prob:
                cut = int(rng.integers(1, len(words)))
                lay.add_row([(0, _tagged(words[:cut], a)), (1, _tagged(words[cut:], a))])
            else:
                lay.add_row([(0, _tagged(words, a))])
    else:
        lay.add_row([(0, _tagged(street + area[1:], a))])

    # header key/value and date (the time shares the date's segment but is not part of the entity)
    lay.add_row([(0, _tagged(phrase("header_key"), None)),
                 (1, [(_pick(rng, lex["house_no"]), None)])])
    vertical = rng.random() < spec.vertical_prob
    date_cell = [(_pick(rng, dates), tag(DATE))]
    if rng.random() < 0.6:
        date_cell.append((_pick(rng, time_strings()), None))
    key_value(phrase("date_key"), date_cell, reverse=reverse_doc and rng.random() < 0.5, vertical=vertical)

    # items
    total_value = _pick(rng, amounts)
    for _ in range(int(rng.integers(spec.min_items, spec.max_items + 1))):
        words = [_pick(rng, lex["item"])]
        if rng.random() < 0.5:
            words.insert(0, _pick(rng, lex["item_kind"]))
        if rng.random() < 0.5:
            words.append(_pick(rng, lex["item"]))
        qty = [_pick(rng, lex["qty"])]
        if rng.random() < 0.5:
            qty.append(_pick(rng, lex["unit"]))
        lay.add_row([(0, _tagged(words, None)), (1, _tagged(qty, None)),
                     (2, _tagged(currency + [_pick(rng, amounts)], None))])

    # totals block: the true total plus distractors repeating its amount
    rows = [("total", phrase("total_key"), total_value)]
    if rng.random() < spec.distractor_prob:
        rows.append(("distractor", phrase("distractor_key"), total_value))
        if rng.random() < 0.5:
            rows.append(("distractor", phrase("distractor_key"), total_value))
    rows.append(("misc", phrase("misc_key"), _pick(rng, amounts)))
    rng.shuffle(rows)
    vertical = rng.random() < spec.vertical_prob
    for kind, key, value in rows:
        vtag = tag(TOTAL) if kind == "total" else None
        key_value(key, _tagged(currency, None) + [(value, vtag)], reverse=reverse_doc, vertical=vertical, col=1)

    return lay.render(f"doc{index:05d}", doc_class)


def generate_corpus(spec: GenSpec) -> tuple[list[Document], list[Document], list[Document]]:
    """Generate train/dev/test documents (pixel coordinates, file order shuffled)."""
    docs = [generate_document(spec, i) for i in range(spec.doc_count)]
    n_train = int(round(spec.splits[0] * spec.doc_count))
    n_dev = int(round(spec.splits[1] * spec.doc_count))
    return docs[:n_train], docs[n_train:n_train + n_dev], docs[n_train + n_dev:]


# ---------------------------------------------------------------------------
# statistics


def document_entities(doc: Document) -> list[tuple[str, list[tuple[int, int]]]]:
    """Entities as maximal same-tag runs along the reading-order serialization.

    Each entity is (tag, [(segment_id, word_idx), ...]).
    """
    doc = normalize_document(doc)
    order = [i for line in group_lines(doc.segments) for i in line]
    entities: list[tuple[str, list]] = []
    prev = None
    for i in order:
        seg = doc.segments[i]
        for k, w in enumerate(seg.words):
            if w.label is None:
                prev = None
                continue
            if w.label == prev:
                entities[-1][1].append((seg.segment_id, k))
            else:
                entities.append((w.label, [(seg.segment_id, k)]))
            prev = w.label
    return entities


@dataclass
class CorpusReport:
    docs: int
    segments: int
    words: int
    entities_per_tag: dict
    multi_segment_entity_fraction: float   # docs holding an entity that spans >= 2 segments
    duplicate_distractor_fraction: float   # docs where a labeled total's text also appears unlabeled

    def table(self) -> str:
        lines = [f"docs      {self.docs}", f"segments  {self.segments}", f"words     {self.words}"]
        for t, n in self.entities_per_tag.items():
            lines.append(f"entity {t:<10} {n}")
        lines.append(f"multi-segment entity fraction   {self.multi_segment_entity_fraction:.4f}")
        lines.append(f"duplicate distractor fraction   {self.duplicate_distractor_fraction:.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def corpus_stats(docs: list[Document], tags: tuple = (COMPANY, ADDRESS, DATE, TOTAL)) -> CorpusReport:
    if not docs:
        raise ValueError("corpus_stats needs a non-empty corpus")
    per_tag = Counter({t: 0 for t in tags})
    multi = dup = 0
    for doc in docs:
        ents = document_entities(doc)
        for t, members in ents:
            per_tag[t] += 1
        if any(len({s for s, _ in members}) >= 2 for _, members in ents):
            multi += 1
        labeled = {w.text for s in doc.segments for w in s.words if w.label == TOTAL}
        unlabeled = Counter(w.text for s in doc.segments for w in s.words if w.label is None)
        if any(unlabeled[t] for t in labeled):
            dup += 1
    return CorpusReport(
        docs=len(docs),
        segments=sum(len(d.segments) for d in docs),
        words=sum(len(d.words) for d in docs),
        entities_per_tag=dict(per_tag),
        multi_segment_entity_fraction=multi / len(docs),
        duplicate_distractor_fraction=dup / len(docs),
    )
