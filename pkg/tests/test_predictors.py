import itertools
import json
import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comicspeaker.frame_order import Assignment, assign_page
from comicspeaker.geometry import BBox
from comicspeaker.model import Frame
from comicspeaker.predictors import (
    ExternalDetection,
    ExternalScores,
    Provenance,
    ScoreFileError,
    ScoreMatrix,
    apply_frame_weight,
    distance_scores,
    frame_distance_scores,
    frame_weight,
    heuristic_scores,
    load_detections,
    load_external_scores,
    predict_frame_distance,
    predict_shortest_distance,
    rank,
    select_per_text,
    top_k_triplets,
    weighted,
)
from comicspeaker.synth import SynthConfig, gen_page, random_scores

from conftest import make_page


def _matrix(values, provenance=Provenance.EXTERNAL):
    values = np.asarray(values, dtype=float)
    return ScoreMatrix(
        "B", 0, tuple(f"b{i}" for i in range(values.shape[0])), tuple(f"t{j}" for j in range(values.shape[1])), values, provenance
    )


# ---------------------------------------------------------------- rule-based

def test_single_character_always_first():
    page = make_page(chars=[("only", [180, 180, 190, 190])], texts=[("t", [0, 0, 10, 10])])
    assert predict_shortest_distance(page).top("t") == ["only"]


def test_closer_character_ranks_first():
    # centroid distances 50 and 120 from the text at (25, 25)
    page = make_page(
        chars=[("B", [140, 20, 150, 30]), ("A", [70, 20, 80, 30])],
        texts=[("t", [20, 20, 30, 30])],
    )
    pred = predict_shortest_distance(page)
    assert pred.rankings["t"] == [("A", -50.0), ("B", -120.0)]


def test_no_characters_flags_every_text():
    page = make_page(texts=[("t", [0, 0, 1, 1])])
    pred = predict_shortest_distance(page)
    assert pred.rankings == {"t": []} and pred.flagged == {"t"}


def _two_frame_page():
    frames = [Frame("right", BBox(100, 0, 400, 100)), Frame("left", BBox(0, 0, 95, 100))]
    # text at x=310; in-frame character 200 px away, out-of-frame character 250 px away
    chars = [("inside", [105, 45, 115, 55]), ("outside", [55, 45, 65, 55])]
    return make_page(frames=frames, chars=chars, texts=[("t", [305, 45, 315, 55])], width=400, height=100)


def test_frame_distance_beats_nearer_out_of_frame_character():
    frames = [Frame("right", BBox(100, 0, 400, 100)), Frame("left", BBox(0, 0, 95, 100))]
    page = make_page(
        frames=frames,
        chars=[("inside", [335, 45, 345, 55]), ("outside", [85, 45, 95, 55])],
        texts=[("t", [135, 45, 145, 55])],
        width=400,
        height=100,
    )
    d = distance_scores(page)
    assert (d.score("inside", "t"), d.score("outside", "t")) == (-200.0, -50.0)
    assert predict_shortest_distance(page).top("t") == ["outside"]
    assert predict_frame_distance(page).top("t") == ["inside"]


def test_empty_text_frame_falls_back_to_distance():
    frames = [Frame("a", BBox(0, 0, 100, 100)), Frame("b", BBox(105, 0, 200, 100)), Frame("c", BBox(0, 105, 200, 200))]
    page = make_page(
        frames=frames,
        chars=[("near", [20, 110, 30, 120]), ("far", [10, 10, 20, 20])],
        texts=[("t", [150, 150, 160, 160])],
    )
    assert predict_frame_distance(page).rankings["t"][0][0] == predict_shortest_distance(page).top("t")[0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_one_frame_pages_rank_identically(seed):
    page = gen_page(SynthConfig(seed=seed, rows=(1, 1), cols=(1, 1), chars_per_frame=(1, 4), texts_per_frame=(1, 3)))
    a = predict_shortest_distance(page).rankings
    b = predict_frame_distance(page).rankings
    assert {t: [c for c, _ in r] for t, r in a.items()} == {t: [c for c, _ in r] for t, r in b.items()}


# ----------------------------------------------------------------- heuristic

def test_heuristic_values():
    # page diagonal 500 on a 300x400 page
    page = make_page(
        chars=[("same", [0, 0, 10, 10]), ("half", [295, 395, 300, 400])],
        texts=[("t", [0, 0, 10, 10])],
        width=300,
        height=400,
    )
    g = heuristic_scores(page)
    assert g.score("same", "t") == 1.0
    assert page.diagonal == 500.0
    # centroid distance from (5,5) to (297.5, 397.5) is 490.36..., so g just above 0.5
    assert 0.5 < g.score("half", "t") < 0.51


def test_heuristic_half_at_one_diagonal():
    page = make_page(chars=[("c", [0, 0, 0, 0])], texts=[("t", [300, 400, 300, 400])], width=300, height=400)
    assert heuristic_scores(page).score("c", "t") == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_heuristic_monotone_in_distance(seed):
    page = gen_page(SynthConfig(seed=seed, chars_per_frame=(1, 3)))
    d, g = distance_scores(page).values, heuristic_scores(page).values
    assert np.all((0 < g) & (g <= 1))
    order_d = np.argsort(-d, axis=0, kind="stable")
    order_g = np.argsort(-g, axis=0, kind="stable")
    assert np.array_equal(order_d, order_g)


# ------------------------------------------------------------ external files

def _score_file(tmp_path, rows):
    path = tmp_path / "scores.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


def _ext_page():
    return make_page(chars=[("B1", [0, 0, 10, 10]), ("B2", [20, 0, 30, 10])], texts=[("T2", [40, 0, 50, 10])], title="Bk")


def test_external_score_entry_and_default(tmp_path, caplog):
    path = _score_file(tmp_path, [{"book": "Bk", "page": 0, "char": "B1", "text": "T2", "score": 0.83}])
    with caplog.at_level(logging.WARNING):
        m = load_external_scores(path, _ext_page())
    assert m.score("B1", "T2") == 0.83
    assert m.score("B2", "T2") == 0.0
    assert m.defaulted == 1 and "defaulted to 0" in caplog.text
    assert m.provenance is Provenance.EXTERNAL


def test_external_duplicate_rejected(tmp_path):
    rec = {"book": "Bk", "page": 0, "char": "B1", "text": "T2", "score": 0.5}
    with pytest.raises(ScoreFileError, match="duplicate"):
        ExternalScores.load(_score_file(tmp_path, [rec, rec]))


@pytest.mark.parametrize("score", [1.2, -0.1])
def test_external_out_of_range_names_record(tmp_path, score):
    rec = {"book": "Bk", "page": 0, "char": "B1", "text": "T2", "score": score}
    with pytest.raises(ScoreFileError, match=r"scores\.jsonl:1"):
        ExternalScores.load(_score_file(tmp_path, [rec]))


def test_external_unknown_id_rejected(tmp_path):
    path = _score_file(tmp_path, [{"book": "Bk", "page": 0, "char": "B9", "text": "T2", "score": 0.5}])
    with pytest.raises(ScoreFileError, match="unknown ids"):
        load_external_scores(path, _ext_page())


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        _matrix([[1.5]], Provenance.HEURISTIC)
    with pytest.raises(ValueError):
        _matrix([[float("nan")]], Provenance.RULE)
    m = _matrix([[0.2]])
    with pytest.raises(ValueError):
        m.values[0, 0] = 0.9


def test_detection_probabilities_validated(tmp_path):
    with pytest.raises(ValueError):
        ExternalDetection("d", BBox(0, 0, 1, 1), (0.5, 0.6, 0.0))
    assert ExternalDetection("d", BBox(0, 0, 1, 1), (0.2, 0.7, 0.1)).label == "text"
    path = tmp_path / "det.jsonl"
    path.write_text(json.dumps({"book": "B", "page": 2, "id": "d", "bbox": [0, 0, 4, 4], "probs": [1, 0, 0]}) + "\n")
    (det,) = load_detections(path)[("B", 2)]
    assert det.label == "character" and det.bbox == BBox(0, 0, 4, 4)


# -------------------------------------------------------------- frame weight

def test_frame_weight_exact_values():
    assert frame_weight(3, 3) == 1 / 2
    assert frame_weight(3, 4) == 1 / 3
    assert frame_weight(5, 3) == 1 / 4
    assert frame_weight(1, 1, offset=3.0) == 1 / 3


@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50))
def test_frame_weight_bounded_and_decreasing(a, b, c):
    assert 0 < frame_weight(a, b) <= 0.5
    assert (frame_weight(a, b) == 0.5) == (a == b)
    if abs(a - b) < abs(a - c):
        assert frame_weight(a, b) > frame_weight(a, c)


@pytest.mark.parametrize("k_char, g, expected", [(1, 0.8, 0.4), (3, 0.8, 0.2), (2, 0.0, 0.0), (3, 0.0, 0.0)])
def test_apply_frame_weight(k_char, g, expected):
    scores = _matrix([[g]], Provenance.HEURISTIC)
    assignment = {"b0": Assignment("f", k_char, False), "t0": Assignment("f", 1, False)}
    out = apply_frame_weight(scores, assignment)
    assert out.values[0, 0] == pytest.approx(expected, abs=1e-15)
    assert out.provenance is Provenance.WEIGHTED


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_weight_preserves_argmax_when_all_in_frame(seed):
    page = gen_page(SynthConfig(seed=seed, rows=(1, 1), cols=(1, 1), chars_per_frame=(2, 4)))
    g = heuristic_scores(page)
    w = weighted(g, page)
    assert np.allclose(w.values, g.values / 2)
    assert {t: r[0][0] for t, r in rank(g).rankings.items()} == {t: r[0][0] for t, r in rank(w).rankings.items()}


# ----------------------------------------------------------------- selection

def _oracle_top_k(m, k):
    every = [(c, t, m.score(c, t)) for c, t in itertools.product(m.char_ids, m.text_ids)]
    every.sort(key=lambda x: (-x[2], x[0], x[1]))
    return every[:k]


def test_top_k_two_by_two():
    m = _matrix([[0.1, 0.9], [0.5, 0.3]])
    assert top_k_triplets(m, k=1) == [("b0", "t1", 0.9)]
    assert [tuple(tr) for tr in top_k_triplets(m, k=4)] == _oracle_top_k(m, 4)
    assert len(top_k_triplets(m, k=99)) == 4


@pytest.mark.parametrize("seed", range(20))
def test_top_k_matches_exhaustive_sort(seed):
    m = random_scores(random.Random(seed), 5, 7, levels=4 if seed % 2 else None)
    for k in (1, 5, 35):
        assert [tuple(tr) for tr in top_k_triplets(m, k=k)] == _oracle_top_k(m, k)


def test_top_k_uses_label_probabilities():
    m = _matrix([[0.9, 0.5]])
    dets = {
        "b0": ExternalDetection("b0", BBox(0, 0, 1, 1), (0.5, 0.25, 0.25)),
        "t0": ExternalDetection("t0", BBox(0, 0, 1, 1), (0.0, 0.2, 0.8)),
        "t1": ExternalDetection("t1", BBox(0, 0, 1, 1), (0.0, 1.0, 0.0)),
    }
    (best,) = top_k_triplets(m, dets, k=1)
    assert best == ("b0", "t1", 0.25)


def test_top_k_rejects_zero():
    with pytest.raises(ValueError):
        top_k_triplets(_matrix([[0.1]]), k=0)


def test_select_per_text():
    m = _matrix([[0.1, 0.9], [0.5, 0.3], [0.7, 0.3]])
    pred = select_per_text(m, {"t0": 1, "t1": 2})
    assert pred.top("t0") == ["b2"]
    # ties at 0.3 resolve by character id
    assert pred.top("t1", 2) == ["b0", "b1"]
    assert not pred.flagged
    over = select_per_text(m, {"t0": 5})
    assert len(over.rankings["t0"]) == 3 and over.flagged == {"t0"}


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_positive_scaling_keeps_orderings(seed, factor):
    rng = random.Random(seed)
    m = random_scores(rng, 4, 3, levels=3)
    scaled = ScoreMatrix(m.book, m.page, m.char_ids, m.text_ids, m.values * factor, Provenance.WEIGHTED)
    counts = {t: rng.randint(1, 4) for t in m.text_ids}
    assert {t: [c for c, _ in r] for t, r in select_per_text(m, counts).rankings.items()} == {
        t: [c for c, _ in r] for t, r in select_per_text(scaled, counts).rankings.items()
    }
    assert [tr[:2] for tr in top_k_triplets(m, k=12)] == [tr[:2] for tr in top_k_triplets(scaled, k=12)]


def test_frame_distance_tiers_are_disjoint():
    page = _two_frame_page()
    _, assignment = assign_page(page)
    fd = frame_distance_scores(page, assignment)
    assert fd.score("inside", "t") > fd.score("outside", "t")
