import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_doc, vocab_for
from layoutkit.doc import (BBox, Document, Segment, ValidationError, Vocabulary, Word, assign_positions,
                           chunk_word, document_to_dict, dumps_corpus, group_lines, load_corpus,
                           normalize_document, order_segments, prepare_document, resolve_token_boxes,
                           save_corpus, tokenize)
from layoutkit.synth import GenSpec, generate_corpus


def test_bbox_rejects_inversion():
    with pytest.raises(ValidationError):
        BBox(0.5, 0.1, 0.4, 0.2)


def test_normalize_direct_division():
    doc = Document("d", 1000, 2000, (Segment((Word("a", BBox(50, 100, 150, 200)),), BBox(50, 100, 150, 200), 0),))
    box = normalize_document(doc).segments[0].words[0].box
    assert box.as_list() == pytest.approx([0.05, 0.05, 0.15, 0.10])
    assert box.quantize() == (50, 50, 150, 100)


def test_normalize_full_page():
    doc = Document("d", 640, 480, (Segment((Word("a", BBox(0, 0, 640, 480)),), BBox(0, 0, 640, 480), 0),))
    box = normalize_document(doc).segments[0].box
    assert box.as_list() == [0.0, 0.0, 1.0, 1.0]
    assert box.quantize() == (0, 0, 1000, 1000)


def test_normalize_rejects_bad_page():
    doc = Document("d", 0, 480, (Segment((Word("a", BBox(0, 0, 1, 1)),), BBox(0, 0, 1, 1), 0),))
    with pytest.raises(ValidationError):
        normalize_document(doc)


def test_dequantize_error_bound(rng):
    pts = np.sort(rng.random((1000, 2, 2)), axis=1)
    for p in pts:
        b = BBox(p[0, 0], p[0, 1], p[1, 0], p[1, 1])
        back = BBox.dequantize(b.quantize())
        assert max(abs(a - c) for a, c in zip(b.as_list(), back.as_list())) <= 1 / 1000
        assert back.quantize() == b.quantize()


def test_positions_local_and_global():
    doc = prepare_document(make_doc([(100, [(100, "TOTAL AMOUNT"), (500, "193.00")])]))
    local = [[w.position for w in s.words] for s in assign_positions(doc, "local").segments]
    glob = [[w.position for w in s.words] for s in assign_positions(doc, "global").segments]
    assert local == [[1, 2], [1]]
    assert glob == [[1, 2], [3]]


def test_positions_single_word():
    doc = prepare_document(make_doc([(100, [(100, "x")])]))
    for mode in ("local", "global"):
        assert assign_positions(doc, mode).segments[0].words[0].position == 1


def test_chunking():
    assert chunk_word("TOTAL") == ["TOT", "AL"]
    assert chunk_word("HI") == ["HI"]


def test_tokenize_word_alignment(two_segment_doc):
    doc = prepare_document(two_segment_doc)
    seq = tokenize(doc, vocab_for(doc))
    assert seq.tokens[0] == 1 and seq.tokens[-1] == 2   # CLS, SEP
    assert seq.pos_1d[0] == 0 and seq.pos_1d[-1] == 0
    assert (seq.box_2d[0] == 0).all()
    # tokens of a word are contiguous and decode back to the word
    itos = vocab_for(doc).to_list()
    for w, text in enumerate(seq.word_texts):
        idx = np.flatnonzero(seq.word_index == w)
        assert (np.diff(idx) == 1).all()
        assert "".join(itos[t] for t in seq.tokens[idx]) == text


def test_sep_position_global(two_segment_doc):
    doc = prepare_document(two_segment_doc)
    seq = tokenize(doc, vocab_for(doc), one_d_mode="global")
    assert seq.pos_1d[-1] == seq.word_positions.max() + 1


def test_unknown_chunk_maps_to_unk():
    doc = prepare_document(make_doc([(100, [(100, "abc")])]))
    seq = tokenize(doc, Vocabulary(["xyz"]))
    assert seq.tokens[1] == Vocabulary(["xyz"]).unk_id


def test_local_restart_and_segment_sharing():
    train, _, _ = generate_corpus(GenSpec(doc_count=20, seed=3))
    vocab = Vocabulary.from_words(GenSpec().all_words())
    for doc in train:
        seq = tokenize(prepare_document(doc), vocab, "local", "segment")
        real = ~seq.special_mask
        segs = seq.segment_index
        starts = [t for t in range(1, len(segs) - 1) if segs[t] != segs[t - 1]]
        assert all(seq.pos_1d[t] == 1 for t in starts)
        boxes = {tuple(b) for b in seq.box_2d[real]}
        assert len(boxes) <= len(seq.segment_boxes)
        for s in np.unique(segs[real]):
            assert len({tuple(b) for b in seq.box_2d[segs == s]}) == 1
        gseq = tokenize(prepare_document(doc), vocab, "global", "word")
        assert (np.diff(gseq.word_positions) > 0).all()


def test_segment_vs_word_boxes():
    doc = prepare_document(make_doc([(100, [(100, "ab cd")])]))
    seq = tokenize(doc, vocab_for(doc), two_d_mode="segment")
    assert (seq.box_2d[1] == seq.box_2d[2]).all()
    wseq = resolve_token_boxes(seq, "word")
    assert not (wseq.box_2d[1] == wseq.box_2d[2]).all()
    assert (wseq.box_2d[0] == 0).all()


def test_truncation_drops_whole_segments():
    rows = [(20 * i + 5, [(10, " ".join(f"w{i}x{k}" for k in range(5)))]) for i in range(48)]
    doc = prepare_document(make_doc(rows, height=2000))
    assert len(doc.words) == 240
    vocab = vocab_for(doc)
    full = sum(len(chunk_word(w.text)) for w in doc.words)
    for max_len in (64, 100, 512):
        seq = tokenize(doc, vocab, max_len=max_len)
        assert len(seq) <= max_len
        kept = len(seq.segment_boxes)
        # oracle: the largest prefix of whole segments that fits
        sizes = [sum(len(chunk_word(w.text)) for w in s.words) for s in doc.segments]
        expect = max(k for k in range(len(sizes) + 1) if sum(sizes[:k]) <= max_len - 2)
        assert kept == expect
        assert seq.num_words == sum(len(s.words) for s in doc.segments[:kept])
    assert len(tokenize(doc, vocab, max_len=full + 2)) == full + 2


def test_truncation_to_nothing_is_an_error():
    doc = prepare_document(make_doc([(100, [(100, "abcdefghijkl")])]))
    with pytest.raises(ValueError):
        tokenize(doc, vocab_for(doc), max_len=3)


def test_tokenize_requires_normalized(two_segment_doc):
    with pytest.raises(ValueError):
        tokenize(two_segment_doc, vocab_for(two_segment_doc))


def test_reading_order_lines():
    # second segment of the first line is slightly lower but overlaps > 50%
    doc = make_doc([(100, [(600, "right")]), (108, [(100, "left")]), (300, [(100, "below")])])
    ordered = order_segments(normalize_document(doc))
    assert [s.words[0].text for s in ordered.segments] == ["left", "right", "below"]


def test_line_grouping_threshold():
    def seg(y1, y2, x, i):
        return Segment((Word("w", BBox(x, y1, x + 10, y2)),), BBox(x, y1, x + 10, y2), i)

    # overlap exactly half of the smaller height: not the same line
    assert len(group_lines([seg(0, 20, 0, 0), seg(10, 30, 50, 1)])) == 2
    assert len(group_lines([seg(0, 20, 0, 0), seg(9, 29, 50, 1)])) == 1
    # transitive chaining
    assert len(group_lines([seg(0, 20, 0, 0), seg(9, 29, 50, 1), seg(18, 38, 100, 2)])) == 1


def test_load_single_doc(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"doc_id": "a", "page_width": 100, "page_height": 100, "segments": [
        {"box": [0, 0, 50, 10], "words": [{"text": "x", "box": [0, 0, 20, 10]},
                                          {"text": "y", "box": [30, 0, 50, 10]}]}]}) + "\n")
    docs = load_corpus(p)
    assert len(docs) == 1 and [w.text for w in docs[0].words] == ["x", "y"]


def test_load_rejects_word_outside_page(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"doc_id": "a", "page_width": 100, "page_height": 100, "segments": [
        {"box": [0, 0, 150, 10], "words": [{"text": "x", "box": [0, 0, 150, 10]}]}]}) + "\n")
    with pytest.raises(ValidationError, match="a: "):
        load_corpus(p)


def test_load_inverted_box_names_doc(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"doc_id": "bad7", "page_width": 100, "page_height": 100, "segments": [
        {"box": [0, 0, 50, 10], "words": [{"text": "x", "box": [30, 0, 20, 10]}]}]}) + "\n")
    with pytest.raises(ValidationError, match="bad7"):
        load_corpus(p)


def test_load_malformed_line_number(tmp_path):
    p = tmp_path / "c.jsonl"
    good = json.dumps({"doc_id": "a", "page_width": 10, "page_height": 10, "segments": [
        {"box": [0, 0, 5, 5], "words": [{"text": "x", "box": [0, 0, 5, 5]}]}]})
    p.write_text(good + "\n{not json\n")
    with pytest.raises(ValidationError, match="line 2"):
        load_corpus(p)


def test_load_duplicate_doc_id(tmp_path):
    p = tmp_path / "c.jsonl"
    good = json.dumps({"doc_id": "a", "page_width": 10, "page_height": 10, "segments": [
        {"box": [0, 0, 5, 5], "words": [{"text": "x", "box": [0, 0, 5, 5]}]}]})
    p.write_text(good + "\n" + good + "\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_corpus(p)


def test_segment_must_contain_words():
    with pytest.raises(ValidationError):
        Document("d", 100, 100, (Segment((Word("x", BBox(0, 0, 50, 10)),), BBox(0, 0, 20, 10), 0),)).validate()


def test_corpus_round_trip_byte_stable(tmp_path):
    train, dev, test = generate_corpus(GenSpec(doc_count=100, seed=5))
    docs = train + dev + test
    p = tmp_path / "c.jsonl"
    save_corpus(docs, p)
    loaded = load_corpus(p)
    assert len(loaded) == 100
    assert [d.doc_id for d in loaded] == [d.doc_id for d in docs]
    assert [document_to_dict(d) for d in loaded] == [document_to_dict(d) for d in docs]
    assert dumps_corpus(loaded) == p.read_text()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 4), st.integers(0, 2)), min_size=1, max_size=8),
       st.sampled_from(["local", "global"]), st.sampled_from(["word", "segment"]))
def test_sequence_invariants(layout, one_d, two_d):
    rows = {}
    for row, nwords, col in layout:
        rows.setdefault(row, {})[col] = " ".join("w" * (k + 1) + "z" * col for k in range(nwords))
    doc = make_doc([(40 * r + 10, [(300 * c + 10, t) for c, t in cols.items()]) for r, cols in rows.items()])
    prepared = prepare_document(doc)
    seq = tokenize(prepared, vocab_for(doc), one_d, two_d)
    L = len(seq)
    for arr in (seq.word_index, seq.segment_index, seq.pos_1d, seq.special_mask):
        assert len(arr) == L
    assert seq.box_2d.shape == (L, 4)
    real = ~seq.special_mask
    # segments are contiguous and appear in order
    assert (np.diff(seq.segment_index[real]) >= 0).all()
    assert (np.diff(seq.word_index[real]) >= 0).all()
    if one_d == "local":
        for s in range(len(seq.segment_boxes)):
            assert seq.word_positions[seq.word_segment == s].tolist() == list(range(1, (seq.word_segment == s).sum() + 1))
    else:
        assert seq.word_positions.tolist() == list(range(1, seq.num_words + 1))
    if two_d == "segment":
        assert len({tuple(b) for b in seq.box_2d[real]}) <= len(seq.segment_boxes)
