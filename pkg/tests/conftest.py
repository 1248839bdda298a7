import numpy as np
import pytest

from layoutkit.doc import BBox, Document, Segment, Vocabulary, Word


def make_doc(rows, doc_id="d0", width=1000.0, height=1000.0, labels=None, doc_class=None):
    """Build a pixel-space document from rows of segments.

    ``rows`` is a list of (y, [(x, "word word ..."), ...]); every word is 40 px wide,
    20 px tall, spaced 50 px apart. ``labels`` maps word text to a tag.
    """
    labels = labels or {}
    segs = []
    for y, row in rows:
        for x, text in row:
            words = []
            for k, t in enumerate(text.split()):
                x1 = x + 50 * k
                words.append(Word(t, BBox(x1, y, x1 + 40, y + 20), labels.get(t)))
            box = BBox(words[0].box.x1, y, words[-1].box.x2, y + 20)
            segs.append(Segment(tuple(words), box, len(segs)))
    return Document(doc_id, width, height, tuple(segs), doc_class).validate()


def vocab_for(*docs) -> Vocabulary:
    return Vocabulary.from_words(w.text for d in docs for w in d.words)


@pytest.fixture
def two_segment_doc():
    # one line holding two segments, a second line holding one
    return make_doc([(100, [(100, "alpha beta"), (500, "gamma delta epsilon")]),
                     (200, [(100, "zeta")])])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_corpus():
    """The default 2000-document corpus: (train, dev, test, vocab, spec)."""
    from layoutkit.synth import GenSpec, generate_corpus

    spec = GenSpec()
    train, dev, test = generate_corpus(spec)
    return train, dev, test, Vocabulary.from_words(spec.all_words()), spec


@pytest.fixture(scope="session")
def small_corpus():
    from layoutkit.synth import GenSpec, generate_corpus

    spec = GenSpec(doc_count=40, seed=11)
    train, dev, test = generate_corpus(spec)
    return train, dev, test, Vocabulary.from_words(spec.all_words()), spec


def tiny_model_config(vocab_size=512, **kw):
    from layoutkit.model import ModelConfig

    base = dict(vocab_size=vocab_size, hidden_size=16, layers=1, heads=2, ffn_size=32, dropout=0.1)
    base.update(kw)
    return ModelConfig(**base)


# acceptance criteria record one verdict line each; printed at the end of the run
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
