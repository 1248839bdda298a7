import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_doc, vocab_for
from layoutkit.doc import prepare_document, tokenize
from layoutkit.masking import (ACT_KEEP, ACT_MASK, ACT_RANDOM, IGNORE, MpmSelection, ReplacementPolicy,
                               apply_box_masks, apply_mlm, boundary_words, build_example, derive_seed,
                               plan_mlm, select_mpm, split_segments, word_mask_probabilities)

GOLDEN = Path(__file__).parent / "golden" / "box_split.json"


def seq_with(sizes, one_d="local", two_d="segment", long_words=False):
    rows = []
    k = 0
    for i, n in enumerate(sizes):
        text = []
        for _ in range(n):
            text.append(("word%02d" if long_words else "w%d") % k)
            k += 1
        rows.append((40 * i + 10, [(10, " ".join(text))]))
    doc = prepare_document(make_doc(rows, height=40 * len(sizes) + 100))
    vocab = vocab_for(doc)
    return tokenize(doc, vocab, one_d, two_d), vocab


def test_derive_seed_stable():
    assert derive_seed(0, "doc", 1) == derive_seed(0, "doc", 1)
    assert derive_seed(0, "doc", 1) != derive_seed(0, "doc", 2)
    assert 0 <= derive_seed("x") < 2 ** 63


def test_plan_determinism():
    seq, _ = seq_with([3, 4, 2], long_words=True)
    for strategy in ("naive", "wwm", "wwm_lam"):
        a, b = plan_mlm(seq, strategy, 0.3, 7), plan_mlm(seq, strategy, 0.3, 7)
        assert (a.masked == b.masked).all() and (a.labels == b.labels).all()


def test_specials_never_masked():
    seq, _ = seq_with([2, 3], long_words=True)
    for seed in range(50):
        for strategy in ("naive", "wwm", "wwm_lam"):
            plan = plan_mlm(seq, strategy, 0.9, seed)
            assert not plan.masked[seq.special_mask].any()


def test_lam_probabilities():
    seq, _ = seq_with([1, 3, 4])
    probs = word_mask_probabilities(seq, "wwm_lam", 0.25)
    assert probs.tolist() == [0.75, 0.75, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75]
    capped = word_mask_probabilities(seq, "wwm_lam", 0.4)
    assert (capped[boundary_words(seq)] == 1.0).all()
    for seed in range(20):
        plan = plan_mlm(seq, "wwm_lam", 0.4, seed)
        assert plan.word_masked[boundary_words(seq)].all()


def test_one_word_segment_not_compounded():
    seq, _ = seq_with([1])
    assert word_mask_probabilities(seq, "wwm_lam", 0.2).tolist() == [pytest.approx(0.6)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 10 ** 6),
       st.sampled_from(["wwm", "wwm_lam"]), st.floats(0.05, 0.95))
def test_wwm_atomicity(sizes, seed, strategy, p):
    seq, vocab = seq_with(sizes, long_words=True)
    plan = plan_mlm(seq, strategy, p, seed)
    for w in range(seq.num_words):
        m = plan.masked[seq.word_index == w]
        assert m.all() or not m.any()
    ex = apply_mlm(seq, plan, vocab, seed=seed)
    for w in range(seq.num_words):
        acts = ex.actions[seq.word_index == w]
        assert len(set(acts.tolist())) == 1


def test_apply_mlm_degenerate_policies():
    seq, vocab = seq_with([3, 3], long_words=True)
    plan = plan_mlm(seq, "wwm", 0.5, 3)
    assert plan.num_masked > 0
    ex = apply_mlm(seq, plan, vocab, ReplacementPolicy(1.0, 0.0, 0.0), seed=1)
    assert (ex.seq.tokens[plan.masked] == vocab.mask_id).all()
    assert (ex.seq.tokens[~plan.masked] == seq.tokens[~plan.masked]).all()
    keep = apply_mlm(seq, plan, vocab, ReplacementPolicy(0.0, 0.0, 1.0), seed=1)
    assert (keep.seq.tokens == seq.tokens).all()
    assert (keep.mlm_labels[plan.masked] == seq.tokens[plan.masked]).all()
    assert (keep.mlm_labels[~plan.masked] == IGNORE).all()
    assert (keep.seq.pos_1d == seq.pos_1d).all() and (keep.seq.box_2d == seq.box_2d).all()


def test_apply_mlm_length_mismatch():
    seq, vocab = seq_with([3])
    other, _ = seq_with([4])
    with pytest.raises(ValueError):
        apply_mlm(seq, plan_mlm(other, "wwm", 0.5, 0), vocab)


def test_policy_validation():
    with pytest.raises(ValueError):
        ReplacementPolicy(0.5, 0.5, 0.5)


def test_replacement_fractions():
    seq, vocab = seq_with([5] * 40, long_words=True)
    counts = np.zeros(4)
    for seed in range(60):
        plan = plan_mlm(seq, "wwm", 0.9, seed)
        ex = apply_mlm(seq, plan, vocab, seed=seed + 1000)
        firsts = seq.first_token_positions()
        acts = ex.actions[firsts][plan.word_masked]
        counts += np.bincount(acts, minlength=4)
    frac = counts[1:] / counts[1:].sum()
    assert counts[1:].sum() >= 10_000
    assert frac == pytest.approx([0.8, 0.1, 0.1], abs=0.02)
    assert counts[0] == 0


def test_random_replacement_avoids_specials():
    seq, vocab = seq_with([5] * 10, long_words=True)
    plan = plan_mlm(seq, "naive", 0.9, 0)
    ex = apply_mlm(seq, plan, vocab, ReplacementPolicy(0.0, 1.0, 0.0), seed=4)
    assert (ex.seq.tokens[plan.masked] >= vocab.num_special).all()
    assert (ex.actions[plan.masked] == ACT_RANDOM).all()


def test_select_mpm_properties():
    seq, _ = seq_with([4, 4, 4])
    sel = select_mpm(seq, 0.5, 11)
    assert len(set(sel.selected_word_ids)) == len(sel.selected_word_ids)
    assert len(set(sel.pseudo_heights)) == len(sel.pseudo_heights)
    assert all(1 <= n <= 1000 for n in sel.pseudo_heights)
    assert np.allclose(sel.target_boxes, seq.word_boxes[sel.selected_word_ids])
    excl = np.ones(seq.num_words, dtype=bool)
    assert len(select_mpm(seq, 0.9, 1, exclude_words=excl)) == 0


def test_select_mpm_skips_zero_area():
    seq, _ = seq_with([3])
    seq.word_boxes[1] = [0.2, 0.2, 0.2, 0.3]
    for seed in range(30):
        assert 1 not in select_mpm(seq, 0.9, seed).selected_word_ids


def test_select_rate():
    seq, _ = seq_with([5] * 50)
    picked = total = 0
    for seed in range(40):
        picked += len(select_mpm(seq, 0.15, seed))
        total += seq.num_words
    assert total >= 10_000
    assert abs(picked / total - 0.15) <= 0.01


def pieces_of(seq):
    out = []
    for s in range(len(seq.segment_boxes)):
        words = np.flatnonzero(seq.word_segment == s).tolist()
        out.append({"words": words, "positions": seq.word_positions[words].tolist(),
                    "id": int(seq.segment_ids[s])})
    return out


def test_box_split_golden():
    cases = json.loads(GOLDEN.read_text())["cases"]
    assert len(cases) == 94
    for case in cases:
        seq, _ = seq_with(case["sizes"])
        sel = MpmSelection(case["selected"], list(range(1, len(case["selected"]) + 1)),
                           seq.word_boxes[case["selected"]].reshape(-1, 4))
        got = pieces_of(split_segments(seq, sel))
        want = case["pieces"]
        assert [g["words"] for g in got] == [w["words"] for w in want], case
        assert [g["positions"] for g in got] == [w["positions"] for w in want], case
        original = set(seq.segment_ids.tolist())
        for g, w in zip(got, want):
            assert (g["id"] not in original) == w["fresh"], case


def test_box_split_piece_count_rule():
    # a selected word in a segment yields 2 pieces at an edge, 3 in the middle
    for n in (3, 4):
        for w in range(n):
            seq, _ = seq_with([n])
            sel = MpmSelection([w], [5], seq.word_boxes[[w]])
            pieces = len(split_segments(seq, sel).segment_boxes)
            assert pieces == (2 if w in (0, n - 1) else 3)


def test_box_split_examples():
    seq, _ = seq_with([3])
    out = split_segments(seq, MpmSelection([1], [9], seq.word_boxes[[1]]))
    assert [p["positions"] for p in pieces_of(out)] == [[1], [1], [1]]
    out = split_segments(seq, MpmSelection([0], [9], seq.word_boxes[[0]]))
    assert [p["positions"] for p in pieces_of(out)] == [[1], [1, 2]]
    # tight union box for the flanking piece
    assert np.allclose(out.segment_boxes[1], [seq.word_boxes[1, 0], seq.word_boxes[1, 1],
                                              seq.word_boxes[2, 2], seq.word_boxes[2, 3]])
    one, _ = seq_with([1])
    out = split_segments(one, MpmSelection([0], [3], one.word_boxes[[0]]))
    assert len(out.segment_boxes) == 1 and out.segment_ids[0] != one.segment_ids[0]
    assert (out.tokens == one.tokens).all() and (out.pos_1d == one.pos_1d).all()


def test_box_split_out_of_range():
    seq, _ = seq_with([2])
    with pytest.raises(ValueError):
        split_segments(seq, MpmSelection([5], [1], np.zeros((1, 4))))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.integers(0, 10 ** 6))
def test_box_split_conservation(sizes, seed):
    seq, _ = seq_with(sizes)
    sel = select_mpm(seq, 0.4, seed)
    out = split_segments(seq, sel)
    before = sorted((t, tuple(b)) for t, b in zip(seq.word_texts, seq.word_boxes))
    after = sorted((t, tuple(b)) for t, b in zip(out.word_texts, out.word_boxes))
    assert before == after
    assert (out.tokens == seq.tokens).all()
    real = ~out.special_mask
    assert (out.pos_1d[real] >= 1).all()


def test_box_masks():
    rows = [(10, [(10, "193.00 x")]), (60, [(10, "193.00")])]
    doc = prepare_document(make_doc(rows))
    seq = tokenize(doc, vocab_for(doc))
    sel = MpmSelection([0, 2], [17, 400], seq.word_boxes[[0, 2]])
    out, labels = apply_box_masks(split_segments(seq, sel), sel)
    q0 = out.qbox[seq.word_index == 0]
    q2 = out.qbox[seq.word_index == 2]
    assert (q0 == [0, 0, 0, 17]).all() and (q2 == [0, 0, 0, 400]).all()
    firsts = seq.first_token_positions()
    assert np.array_equal(labels[firsts[0]], seq.word_boxes[0])
    assert np.isnan(labels[firsts[1]]).all()
    with pytest.raises(ValueError):
        apply_box_masks(seq, MpmSelection([0, 2], [5, 5], seq.word_boxes[[0, 2]]))


def test_box_mask_label_passthrough():
    seq, _ = seq_with([2])
    seq.word_boxes[0] = [0.1, 0.2, 0.3, 0.25]
    sel = MpmSelection([0], [1], seq.word_boxes[[0]].copy())
    _, labels = apply_box_masks(seq, sel)
    assert labels[1].tolist() == [0.1, 0.2, 0.3, 0.25]


def test_empty_selection_no_change():
    seq, _ = seq_with([3])
    sel = MpmSelection([], [], np.zeros((0, 4)))
    out, labels = apply_box_masks(split_segments(seq, sel), sel)
    assert (out.box_2d == seq.box_2d).all() and np.isnan(labels).all()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.integers(0, 10 ** 6),
       st.sampled_from(["naive", "wwm", "wwm_lam"]))
def test_example_disjoint_and_deterministic(sizes, seed, strategy):
    seq, vocab = seq_with(sizes, long_words=True)
    a = build_example(seq, vocab, strategy, 0.3, seed, enable_mpm=True, p_mpm=0.3)
    b = build_example(seq, vocab, strategy, 0.3, seed, enable_mpm=True, p_mpm=0.3)
    assert (a.seq.tokens == b.seq.tokens).all() and np.array_equal(a.box_labels, b.box_labels, equal_nan=True)
    mlm_words = set(seq.word_index[a.mlm_labels != IGNORE].tolist())
    assert not mlm_words & set(a.selection.selected_word_ids)
    assert (a.mlm_labels[a.actions == ACT_MASK] >= 0).all()
    assert set(np.unique(a.actions).tolist()) <= {0, ACT_MASK, ACT_RANDOM, ACT_KEEP}
