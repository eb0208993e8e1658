"""Recall@K and Recall@(#text) under PredCls / SGCls / SGDet matching.

Counting is per speaker-to-text link and micro-averaged over a corpus: a text
with two speakers contributes two links. Pages without ground-truth pairs are
left out of every denominator.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from comicspeaker.frame_order import assign_page
from comicspeaker.geometry import BBox, iou
from comicspeaker.model import CharacterBox, Difficulty, Page, SpeakerPair, TextBox
from comicspeaker.predictors import (
    ExternalDetection,
    ExternalScores,
    Prediction,
    ScoreMatrix,
    Triplet,
    apply_frame_weight,
    distance_scores,
    frame_distance_scores,
    heuristic_scores,
    select_per_text,
)

log = logging.getLogger(__name__)

SPLITS = (Difficulty.EASY, Difficulty.HARD)


class Mode(str, enum.Enum):
    PREDCLS = "PredCls"
    SGCLS = "SGCls"
    SGDET = "SGDet"


@dataclass(frozen=True)
class MatchCriteria:
    mode: Mode = Mode.PREDCLS
    iou_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.iou_threshold <= 1:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")


@dataclass(frozen=True)
class Region:
    id: str
    bbox: Optional[BBox] = None
    label: str = ""


def match_pair(
    pred: tuple[Region, Region],
    gt: tuple[Region, Region],
    criteria: MatchCriteria = MatchCriteria(),
) -> bool:
    """True when subject, predicate and object of ``pred`` all agree with ``gt``."""
    (p_char, p_text), (g_char, g_text) = pred, gt
    if criteria.mode is Mode.PREDCLS:
        return p_char.id == g_char.id and p_text.id == g_text.id
    labels_ok = p_char.label in ("", "character") and p_text.label in ("", "text")
    if criteria.mode is Mode.SGCLS:
        return labels_ok and p_char.id == g_char.id and p_text.id == g_text.id
    if not labels_ok or None in (p_char.bbox, p_text.bbox, g_char.bbox, g_text.bbox):
        return False
    thr = criteria.iou_threshold
    return iou(p_char.bbox, g_char.bbox) >= thr and iou(p_text.bbox, g_text.bbox) >= thr


def gt_links(pairs: Iterable[SpeakerPair]) -> list[tuple[str, str, Difficulty]]:
    return [(s, p.text_id, p.difficulty) for p in pairs for s in p.speaker_box_ids]


def _regions(page: Page) -> dict[str, Region]:
    out = {c.id: Region(c.id, c.bbox, "character") for c in page.characters}
    out.update({t.id: Region(t.id, t.bbox, "text") for t in page.texts})
    return out


def _greedy_match(
    predicted: Sequence[tuple[str, str]],
    links: Sequence[tuple[str, str, Difficulty]],
    pred_regions: Mapping[str, Region],
    gt_regions: Mapping[str, Region],
    criteria: MatchCriteria,
) -> list[bool]:
    """Match predictions (best first) to GT links, each side used at most once."""
    hit = [False] * len(links)
    for c, t in predicted:
        pred = (pred_regions.get(c, Region(c)), pred_regions.get(t, Region(t)))
        for n, (s, gt_t, _) in enumerate(links):
            if hit[n]:
                continue
            if match_pair(pred, (gt_regions.get(s, Region(s)), gt_regions.get(gt_t, Region(gt_t))), criteria):
                hit[n] = True
                break
    return hit


def recall_at_k(
    triplets: Sequence[Triplet],
    gt_pairs: Sequence[SpeakerPair],
    criteria: MatchCriteria = MatchCriteria(),
    pred_regions: Optional[Mapping[str, Region]] = None,
    gt_regions: Optional[Mapping[str, Region]] = None,
) -> Optional[float]:
    """Share of GT links covered by ``triplets``; None when there is no ground truth."""
    links = gt_links(gt_pairs)
    if not links:
        return None
    hit = _greedy_match([(tr.char_id, tr.text_id) for tr in triplets], links, pred_regions or {}, gt_regions or {}, criteria)
    return sum(hit) / len(links)


def count_num_text(
    prediction: Prediction,
    gt_pairs: Sequence[SpeakerPair],
    criteria: MatchCriteria = MatchCriteria(),
    pred_regions: Optional[Mapping[str, Region]] = None,
    gt_regions: Optional[Mapping[str, Region]] = None,
) -> Counter:
    """Correct / total GT link counts, keyed by (difficulty, 'correct'|'total')."""
    counts: Counter = Counter()
    for pair in gt_pairs:
        links = gt_links([pair])
        candidates = [(c, pair.text_id) for c, _ in prediction.rankings.get(pair.text_id, [])]
        if criteria.mode is Mode.SGDET:
            # SGDet predictions name detected texts; try every predicted text whose box can match.
            candidates = [(c, t) for t, ranked in prediction.rankings.items() for c, _ in ranked]
        hit = _greedy_match(candidates, links, pred_regions or {}, gt_regions or {}, criteria)
        counts[(pair.difficulty, "correct")] += sum(hit)
        counts[(pair.difficulty, "total")] += len(links)
    return counts


def recall_at_num_text(
    prediction: Prediction,
    gt_pairs: Sequence[SpeakerPair],
    criteria: MatchCriteria = MatchCriteria(),
    pred_regions: Optional[Mapping[str, Region]] = None,
    gt_regions: Optional[Mapping[str, Region]] = None,
) -> Optional[float]:
    counts = count_num_text(prediction, gt_pairs, criteria, pred_regions, gt_regions)
    total = sum(v for (_, kind), v in counts.items() if kind == "total")
    if not total:
        return None
    return sum(v for (_, kind), v in counts.items() if kind == "correct") / total


# ------------------------------------------------------------------ evaluate

@dataclass(frozen=True)
class SplitResult:
    correct: int
    gt_pairs: int

    @property
    def recall(self) -> float:
        return self.correct / self.gt_pairs if self.gt_pairs else 0.0


@dataclass(frozen=True)
class EvalReport:
    predictor: str
    mode: Mode
    easy: SplitResult
    hard: SplitResult
    pages_evaluated: int
    failed_pages: tuple[tuple[str, int, str], ...] = ()
    # (book, page, easy_correct, easy_total, hard_correct, hard_total)
    page_counts: tuple[tuple[str, int, int, int, int, int], ...] = field(default=(), repr=False)

    @property
    def total(self) -> SplitResult:
        return SplitResult(self.easy.correct + self.hard.correct, self.easy.gt_pairs + self.hard.gt_pairs)

    def to_json(self, *, with_pages: bool = False) -> dict:
        out = {
            "predictor": self.predictor,
            "mode": self.mode.value,
            "pages_evaluated": self.pages_evaluated,
            "failed_pages": [{"book": b, "page": p, "error": e} for b, p, e in self.failed_pages],
        }
        for name, r in (("Easy", self.easy), ("Hard", self.hard), ("Total", self.total)):
            out[name] = {"recall": r.recall, "correct": r.correct, "gt_pairs": r.gt_pairs}
        if with_pages:
            out["pages"] = [list(row) for row in self.page_counts]
        return out

    def table(self) -> str:
        return format_table([self])


def format_table(reports: Sequence[EvalReport]) -> str:
    title = f"Recall@(#text) for {reports[0].mode.value}" if reports else "Recall@(#text)"
    width = max([len("Method")] + [len(r.predictor) for r in reports])
    lines = [title, f"{'Method'.ljust(width)}  {'Easy':>6}  {'Hard':>6}  {'Total':>6}"]
    for r in reports:
        cells = [f"{100 * s.recall:6.2f}" for s in (r.easy, r.hard, r.total)]
        lines.append(f"{r.predictor.ljust(width)}  " + "  ".join(cells))
    return "\n".join(lines)


ScoreFn = Callable[[Page], ScoreMatrix]


def make_predictor(
    name: str,
    external: Optional[ExternalScores] = None,
    *,
    offset: float = 2.0,
    rtl: bool = True,
) -> ScoreFn:
    """Score function for one of the named predictors."""

    def weighted(base: ScoreFn) -> ScoreFn:
        def fn(page: Page) -> ScoreMatrix:
            _, assignment = assign_page(page, rtl=rtl)
            return apply_frame_weight(base(page), assignment, offset)

        return fn

    if name == "shortest":
        return distance_scores
    if name == "frame":
        return lambda page: frame_distance_scores(page, assign_page(page, rtl=rtl)[1])
    if name == "heuristic":
        return heuristic_scores
    if name == "heuristic+weight":
        return weighted(heuristic_scores)
    if name in ("external", "external+weight"):
        if external is None:
            raise ValueError(f"predictor {name!r} needs an external score file")
        return external.matrix if name == "external" else weighted(external.matrix)
    raise ValueError(f"unknown predictor {name!r}")


def _label_weighted(scores: ScoreMatrix, dets: Mapping[str, ExternalDetection]) -> ScoreMatrix:
    if scores.values.size and scores.values.min() < 0:
        raise ValueError("label probabilities can only weight non-negative relation scores")
    p_char = np.array([dets[c].probs[0] for c in scores.char_ids], dtype=float)
    p_text = np.array([dets[t].probs[1] for t in scores.text_ids], dtype=float)
    return ScoreMatrix(
        scores.book,
        scores.page,
        scores.char_ids,
        scores.text_ids,
        scores.values * np.outer(p_char, p_text) if scores.values.size else scores.values,
        scores.provenance,
        scores.defaulted,
    )


def detected_view(page: Page, detections: Sequence[ExternalDetection]) -> Page:
    """Page whose characters/texts are the detections labelled as such (frames kept)."""
    chars, texts = [], []
    for d in detections:
        box = d.bbox.clamp(page.width, page.height)
        if d.label == "character":
            chars.append(CharacterBox(d.id, box, ""))
        elif d.label == "text":
            texts.append(TextBox(d.id, box))
    return Page(page.book_title, page.page_index, page.width, page.height, page.frames, tuple(chars), tuple(texts))


def _sgdet_text_map(page: Page, view: Page, thr: float) -> dict[str, str]:
    """GT text id -> detected text id, greedy one-to-one by IoU."""
    candidates = sorted(
        ((iou(g.bbox, d.bbox), g.id, d.id) for g in page.texts for d in view.texts),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    out, used = {}, set()
    for v, g, d in candidates:
        if v < thr or g in out or d in used:
            continue
        out[g] = d
        used.add(d)
    return out


def evaluate_page(
    page: Page,
    predictor: ScoreFn,
    criteria: MatchCriteria = MatchCriteria(),
    detections: Optional[Sequence[ExternalDetection]] = None,
    difficulty: str = "all",
) -> Counter:
    pairs = [p for p in page.pairs if difficulty == "all" or p.difficulty.value.lower() == difficulty]
    if not pairs:
        return Counter()
    gt_regions = _regions(page)
    if criteria.mode is Mode.PREDCLS:
        scores = predictor(page)
        prediction = select_per_text(scores, {p.text_id: len(p.speaker_box_ids) for p in pairs})
        return count_num_text(prediction, pairs, criteria, gt_regions, gt_regions)
    if detections is None:
        raise ValueError(f"{criteria.mode.value} needs detections")
    dets = {d.id: d for d in detections}
    if criteria.mode is Mode.SGCLS:
        missing = [o.id for o in (*page.characters, *page.texts) if o.id not in dets]
        if missing:
            raise ValueError(f"no label probabilities for {missing[:5]}")
        scores = _label_weighted(predictor(page), dets)
        prediction = select_per_text(scores, {p.text_id: len(p.speaker_box_ids) for p in pairs})
        pred_regions = {i: Region(i, gt_regions[i].bbox, dets[i].label) for i in gt_regions}
        return count_num_text(prediction, pairs, criteria, pred_regions, gt_regions)
    view = detected_view(page, detections)
    scores = _label_weighted(predictor(view), dets)
    text_map = _sgdet_text_map(page, view, criteria.iou_threshold)
    required = {text_map[p.text_id]: len(p.speaker_box_ids) for p in pairs if p.text_id in text_map}
    prediction = select_per_text(scores, required) if scores.char_ids else Prediction({})
    pred_regions = _regions(view)
    counts: Counter = Counter()
    for pair in pairs:
        view_text = text_map.get(pair.text_id)
        sub = Prediction({view_text: prediction.rankings.get(view_text, [])}) if view_text else Prediction({})
        counts.update(count_num_text(sub, [pair], criteria, pred_regions, gt_regions))
    return counts


def evaluate(
    predictor: ScoreFn,
    pages: Iterable[Page],
    criteria: MatchCriteria = MatchCriteria(),
    difficulty: str = "all",
    *,
    name: str = "",
    detections: Optional[Mapping[tuple[str, int], Sequence[ExternalDetection]]] = None,
) -> EvalReport:
    """Recall@(#text) of ``predictor`` over ``pages``, per difficulty.

    Pages must carry difficulty labels. A page whose prediction raises is
    recorded in ``failed_pages`` and excluded.
    """
    if difficulty not in ("all", "easy", "hard"):
        raise ValueError(f"unknown difficulty filter {difficulty!r}")
    rows, failed = [], []
    evaluated = 0
    for page in pages:
        if not page.pairs:
            continue
        dets = None
        if detections is not None:
            dets = detections.get((page.book_title, page.page_index), [])
        try:
            counts = evaluate_page(page, predictor, criteria, dets, difficulty)
        except Exception as exc:  # noqa: BLE001 - one bad page must not stop a corpus run
            log.warning("%s p%d: evaluation failed: %s", page.book_title, page.page_index, exc)
            failed.append((page.book_title, page.page_index, str(exc)))
            continue
        if not counts:
            continue
        if counts[(Difficulty.UNASSIGNED, "total")]:
            raise ValueError(f"{page.book_title} p{page.page_index}: pairs lack difficulty labels")
        evaluated += 1
        rows.append(
            (
                page.book_title,
                page.page_index,
                counts[(Difficulty.EASY, "correct")],
                counts[(Difficulty.EASY, "total")],
                counts[(Difficulty.HARD, "correct")],
                counts[(Difficulty.HARD, "total")],
            )
        )
    return EvalReport(
        predictor=name or getattr(predictor, "__name__", "predictor"),
        mode=criteria.mode,
        easy=SplitResult(sum(r[2] for r in rows), sum(r[3] for r in rows)),
        hard=SplitResult(sum(r[4] for r in rows), sum(r[5] for r in rows)),
        pages_evaluated=evaluated,
        failed_pages=tuple(failed),
        page_counts=tuple(rows),
    )
