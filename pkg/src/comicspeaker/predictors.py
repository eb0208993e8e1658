"""Character-to-text relation scores and the rankings derived from them.

Every predictor produces a dense ScoreMatrix over (character, text) pairs of
one page; rankings, per-text selection and top-K triplets are read off it.
Ties are broken by character id, then text id, so results are reproducible.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from comicspeaker.frame_order import FrameAssignment, FrameOrder, assign_page
from comicspeaker.geometry import BBox, centroid_distance
from comicspeaker.model import Page

log = logging.getLogger(__name__)

LABELS = ("character", "text", "background")


class Provenance(str, enum.Enum):
    RULE = "rule"
    HEURISTIC = "heuristic"
    EXTERNAL = "external"
    WEIGHTED = "weighted"


class ScoreFileError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    book: str
    page: int
    char_ids: tuple[str, ...]
    text_ids: tuple[str, ...]
    # shape (len(char_ids), len(text_ids))
    values: np.ndarray
    provenance: Provenance
    defaulted: int = 0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(len(self.char_ids), len(self.text_ids))
        if not np.all(np.isfinite(values)):
            raise ValueError("scores must be finite")
        if self.provenance in (Provenance.HEURISTIC, Provenance.EXTERNAL):
            if values.size and (values.min() < 0 or values.max() > 1):
                raise ValueError(f"{self.provenance.value} scores must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def score(self, char_id: str, text_id: str) -> float:
        return float(self.values[self.char_ids.index(char_id), self.text_ids.index(text_id)])

    def entries(self) -> dict[tuple[str, str], float]:
        return {
            (c, t): float(self.values[i, j])
            for i, c in enumerate(self.char_ids)
            for j, t in enumerate(self.text_ids)
        }


@dataclass(frozen=True)
class Prediction:
    # text id -> [(character id, score), ...], best first
    rankings: dict[str, list[tuple[str, float]]]
    # texts that could not receive the requested number of candidates
    flagged: frozenset[str] = field(default_factory=frozenset)

    def top(self, text_id: str, n: int = 1) -> list[str]:
        return [c for c, _ in self.rankings.get(text_id, [])[:n]]


class Triplet(NamedTuple):
    char_id: str
    text_id: str
    score: float


@dataclass(frozen=True)
class ExternalDetection:
    id: str
    bbox: BBox
    probs: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.probs) != 3:
            raise ValueError(f"detection {self.id}: expected 3 label probabilities")
        if any(not 0 <= p <= 1 for p in self.probs) or abs(sum(self.probs) - 1) > 1e-6:
            raise ValueError(f"detection {self.id}: label probabilities must lie in [0,1] and sum to 1")

    @property
    def label(self) -> str:
        return LABELS[int(np.argmax(self.probs))]


def _matrix(page: Page, fn, provenance: Provenance) -> ScoreMatrix:
    values = np.array([[fn(c, t) for t in page.texts] for c in page.characters], dtype=float)
    return ScoreMatrix(
        page.book_title,
        page.page_index,
        tuple(c.id for c in page.characters),
        tuple(t.id for t in page.texts),
        values.reshape(len(page.characters), len(page.texts)),
        provenance,
    )


def rank(scores: ScoreMatrix) -> Prediction:
    rankings = {}
    for j, t in enumerate(scores.text_ids):
        col = scores.values[:, j]
        order = sorted(range(len(scores.char_ids)), key=lambda i: (-col[i], scores.char_ids[i]))
        rankings[t] = [(scores.char_ids[i], float(col[i])) for i in order]
    flagged = frozenset(scores.text_ids) if not scores.char_ids else frozenset()
    return Prediction(rankings, flagged)


# ---------------------------------------------------------------- rule-based

def distance_scores(page: Page) -> ScoreMatrix:
    """Negated centroid distance: the closest character scores highest."""
    return _matrix(page, lambda c, t: -centroid_distance(c.bbox, t.bbox), Provenance.RULE)


def frame_distance_scores(page: Page, assignment: Optional[FrameAssignment] = None) -> ScoreMatrix:
    """Negated distance, with out-of-frame characters pushed below every in-frame one.

    Out-of-frame scores are offset by (1 + largest candidate distance of that text),
    which keeps the two tiers disjoint while ordering each tier by distance.
    """
    if assignment is None:
        _, assignment = assign_page(page)
    base = distance_scores(page)
    values = np.array(base.values)
    for j, t in enumerate(page.texts):
        if not page.characters:
            continue
        penalty = 1.0 - values[:, j].min()
        frame = assignment[t.id].frame_id
        for i, c in enumerate(page.characters):
            if assignment[c.id].frame_id != frame:
                values[i, j] -= penalty
    return replace(base, values=values)


def predict_shortest_distance(page: Page) -> Prediction:
    if not page.characters:
        log.warning("%s p%d: no characters to rank", page.book_title, page.page_index)
    return rank(distance_scores(page))


def predict_frame_distance(page: Page, order: Optional[FrameOrder] = None) -> Prediction:
    _, assignment = assign_page(page, order)
    return rank(frame_distance_scores(page, assignment))


# ----------------------------------------------------------- score providers

def heuristic_scores(page: Page) -> ScoreMatrix:
    """1 / (1 + d / page diagonal), d the centroid distance; values in (0, 1]."""
    diag = page.diagonal
    return _matrix(page, lambda c, t: 1.0 / (1.0 + centroid_distance(c.bbox, t.bbox) / diag), Provenance.HEURISTIC)


class ExternalScores:
    """Offline relation scores, JSON Lines of {"book", "page", "char", "text", "score"}."""

    def __init__(self, records: Mapping[tuple[str, int], dict[tuple[str, str], float]]):
        self._records = records

    @classmethod
    def load(cls, score_file: str | os.PathLike) -> "ExternalScores":
        records: dict[tuple[str, int], dict[tuple[str, str], float]] = defaultdict(dict)
        with open(score_file, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                where = f"{score_file}:{lineno}"
                try:
                    rec = json.loads(line)
                    key = (str(rec["book"]), int(rec["page"]))
                    pair = (str(rec["char"]), str(rec["text"]))
                    score = float(rec["score"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ScoreFileError(f"{where}: unreadable score record ({exc})") from None
                if not (math.isfinite(score) and 0.0 <= score <= 1.0):
                    raise ScoreFileError(f"{where}: score {score} for {pair} outside [0, 1]")
                if pair in records[key]:
                    raise ScoreFileError(f"{where}: duplicate score for {key[0]} p{key[1]} {pair}")
                records[key][pair] = score
        return cls(dict(records))

    def matrix(self, page: Page) -> ScoreMatrix:
        found = self._records.get((page.book_title, page.page_index), {})
        char_ids = {c.id for c in page.characters}
        text_ids = {t.id for t in page.texts}
        unknown = [p for p in found if p[0] not in char_ids or p[1] not in text_ids]
        if unknown:
            raise ScoreFileError(f"{page.book_title} p{page.page_index}: scores reference unknown ids {unknown[:5]}")
        matrix = _matrix(page, lambda c, t: found.get((c.id, t.id), 0.0), Provenance.EXTERNAL)
        missing = matrix.values.size - len(found)
        if missing:
            log.warning("%s p%d: %d pair(s) without a score, defaulted to 0", page.book_title, page.page_index, missing)
        return replace(matrix, defaulted=missing)


def load_external_scores(score_file: str | os.PathLike, page: Page) -> ScoreMatrix:
    return ExternalScores.load(score_file).matrix(page)


def frame_weight(k_char: int, k_text: int, offset: float = 2.0) -> float:
    return 1.0 / (offset + abs(k_char - k_text))


def apply_frame_weight(scores: ScoreMatrix, assignment: FrameAssignment, offset: float = 2.0) -> ScoreMatrix:
    w = np.array(
        [[frame_weight(assignment[c].k, assignment[t].k, offset) for t in scores.text_ids] for c in scores.char_ids],
        dtype=float,
    ).reshape(scores.values.shape)
    return replace(scores, values=scores.values * w, provenance=Provenance.WEIGHTED)


# ---------------------------------------------------------------- selection

def top_k_triplets(
    scores: ScoreMatrix,
    detections: Optional[Mapping[str, ExternalDetection]] = None,
    k: int = 1,
) -> list[Triplet]:
    """Best ``k`` (character, speak, text) triplets; score = r * P(character) * P(text)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    out = []
    for i, c in enumerate(scores.char_ids):
        p_char = detections[c].probs[0] if detections else 1.0
        for j, t in enumerate(scores.text_ids):
            p_text = detections[t].probs[1] if detections else 1.0
            out.append(Triplet(c, t, float(scores.values[i, j]) * p_char * p_text))
    out.sort(key=lambda tr: (-tr.score, tr.char_id, tr.text_id))
    return out[:k]


def select_per_text(scores: ScoreMatrix, required_count: Mapping[str, int]) -> Prediction:
    """Top-N characters for each text, N taken from ``required_count``."""
    ranked = rank(scores)
    rankings, flagged = {}, set()
    for text_id, n in required_count.items():
        if n < 1:
            raise ValueError(f"text {text_id}: required count must be at least 1")
        if text_id not in ranked.rankings:
            raise KeyError(f"text {text_id} is not scored")
        full = ranked.rankings[text_id]
        if n > len(full):
            flagged.add(text_id)
        rankings[text_id] = full[:n]
    return Prediction(rankings, frozenset(flagged))


def weighted(scores: ScoreMatrix, page: Page, offset: float = 2.0, *, rtl: bool = True) -> ScoreMatrix:
    _, assignment = assign_page(page, rtl=rtl)
    return apply_frame_weight(scores, assignment, offset)


def load_detections(path: str | os.PathLike) -> dict[tuple[str, int], list[ExternalDetection]]:
    """JSON Lines of {"book", "page", "id", "bbox": [x0, y0, x1, y1], "probs": [p_char, p_text, p_bg]}."""
    out: dict[tuple[str, int], list[ExternalDetection]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                det = ExternalDetection(str(rec["id"]), BBox(*map(float, rec["bbox"])), tuple(map(float, rec["probs"])))
                out[(str(rec["book"]), int(rec["page"]))].append(det)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ScoreFileError(f"{path}:{lineno}: bad detection record ({exc})") from None
    return dict(out)


PREDICTORS: Sequence[str] = ("shortest", "frame", "heuristic", "heuristic+weight", "external", "external+weight")
