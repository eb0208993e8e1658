"""Synthetic annotated pages with known speakers, and brute-force oracles.

Pages are generated from ``random.Random`` (Mersenne Twister) seeded with an
integer, so fixtures are identical across platforms. Page ``i`` of a corpus
uses seed ``config.seed * 1_000_003 + i``.

Layout: rows of frames on a jittered grid, gutters at least twice the cut
tolerance. Characters and texts are placed fully inside their frame. Each
text gets one speaker:

* EasySameFrame - a character of the text's own frame;
* HardNeighborFrame - a character of a frame one step away in reading order,
  while the text's own frame always holds at least one other character;
* Mixed - Hard with probability ``hard_ratio`` when possible, else Easy.
"""

from __future__ import annotations

import enum
import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from comicspeaker.dataset import assign_difficulty
from comicspeaker.frame_order import CUT_TOLERANCE, assign_page, shrink_interval
from comicspeaker.geometry import BBox, centroid
from comicspeaker.model import Book, CharacterBox, Frame, Page, SpeakerPair, TextBox
from comicspeaker.predictors import Prediction, Provenance, ScoreMatrix

ORACLE_MAX_FRAMES = 8
CAST = ("c01", "c02", "c03", "c04", "c05", "c06")


class Scenario(str, enum.Enum):
    EASY = "EasySameFrame"
    HARD = "HardNeighborFrame"
    MIXED = "Mixed"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    rows: tuple[int, int] = (2, 4)
    cols: tuple[int, int] = (1, 3)
    chars_per_frame: tuple[int, int] = (1, 2)
    texts_per_frame: tuple[int, int] = (1, 2)
    scenario: Scenario = Scenario.MIXED
    hard_ratio: float = 0.2
    page_width: float = 827.0
    page_height: float = 1170.0

    def __post_init__(self) -> None:
        for name in ("rows", "cols", "chars_per_frame", "texts_per_frame"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        if not 0 <= self.hard_ratio <= 1:
            raise ValueError("hard_ratio must lie in [0, 1]")
        if self.page_width <= 0 or self.page_height <= 0:
            raise ValueError("page size must be positive")


def _check_feasible(cfg: SynthConfig) -> None:
    if cfg.rows[0] < 1 or cfg.cols[0] < 1:
        raise ValueError("infeasible config: pages need at least one frame")
    if cfg.chars_per_frame[0] < 1 and cfg.texts_per_frame[1] > 0:
        raise ValueError("infeasible config: a frame with texts may end up without any character")
    if cfg.scenario is Scenario.HARD and cfg.rows[0] * cfg.cols[0] < 2:
        raise ValueError("infeasible config: HardNeighborFrame needs at least two frames per page")


def _spans(rng: random.Random, start: float, end: float, n: int, gutter: float) -> list[tuple[float, float]]:
    weights = [rng.uniform(0.7, 1.3) for _ in range(n)]
    usable = end - start - gutter * (n - 1)
    out, pos = [], start
    for w in weights:
        size = usable * w / sum(weights)
        out.append((pos, pos + size))
        pos += size + gutter
    return out


def _inner_box(rng: random.Random, f: BBox, w_frac: tuple[float, float], h_frac: tuple[float, float]) -> BBox:
    w = f.width * rng.uniform(*w_frac)
    h = f.height * rng.uniform(*h_frac)
    x = rng.uniform(f.x_min, f.x_max - w)
    y = rng.uniform(f.y_min, f.y_max - h)
    return BBox(round(x, 2), round(y, 2), round(x + w, 2), round(y + h, 2))


def gen_page(config: SynthConfig, book_title: str = "SYNTH", page_index: int = 0) -> Page:
    """One synthetic page with frames, characters, texts and labelled speaker pairs."""
    _check_feasible(config)
    rng = random.Random(config.seed)
    W, H = config.page_width, config.page_height
    gx, gy = 2.5 * CUT_TOLERANCE * W, 2.5 * CUT_TOLERANCE * H
    mx, my = 0.04 * W, 0.04 * H

    frames: list[Frame] = []
    n_rows = rng.randint(*config.rows)
    for y0, y1 in _spans(rng, my, H - my, n_rows, gy):
        n_cols = rng.randint(*config.cols)
        for x0, x1 in _spans(rng, mx, W - mx, n_cols, gx):
            frames.append(Frame(f"p{page_index:03d}f{len(frames):02d}", BBox(round(x0, 2), round(y0, 2), round(x1, 2), round(y1, 2))))

    blank = Page(book_title, page_index, W, H, tuple(frames))
    order, _ = assign_page(blank)
    by_k = {order.k(f.id): f for f in frames}

    chars: list[CharacterBox] = []
    texts: list[TextBox] = []
    chars_in: dict[int, list[str]] = {}
    texts_in: dict[int, list[str]] = {}
    for k in sorted(by_k):
        f = by_k[k].bbox
        chars_in[k], texts_in[k] = [], []
        for _ in range(rng.randint(*config.chars_per_frame)):
            cid = f"p{page_index:03d}b{len(chars):02d}"
            chars.append(CharacterBox(cid, _inner_box(rng, f, (0.2, 0.4), (0.35, 0.7)), rng.choice(CAST)))
            chars_in[k].append(cid)
        for _ in range(rng.randint(*config.texts_per_frame)):
            tid = f"p{page_index:03d}t{len(texts):02d}"
            texts.append(TextBox(tid, _inner_box(rng, f, (0.08, 0.16), (0.15, 0.3)), f"line {len(texts)}"))
            texts_in[k].append(tid)

    pairs = []
    for k in sorted(by_k):
        neighbours = [n for n in (k - 1, k + 1) if chars_in.get(n)]
        for tid in texts_in[k]:
            if config.scenario is Scenario.HARD:
                hard = True
            elif config.scenario is Scenario.EASY:
                hard = False
            else:
                hard = rng.random() < config.hard_ratio
            if hard and neighbours and chars_in[k]:
                speaker = rng.choice(chars_in[rng.choice(neighbours)])
            elif hard and config.scenario is Scenario.HARD:
                raise ValueError("infeasible config: no neighbouring frame holds a character")
            else:
                speaker = rng.choice(chars_in[k])
            pairs.append(SpeakerPair(tid, (speaker,)))

    page = Page(book_title, page_index, W, H, tuple(frames), tuple(chars), tuple(texts), tuple(pairs))
    _, membership = assign_page(page, order)
    return assign_difficulty(page, membership)


def gen_book(config: SynthConfig, n_pages: int, title: str = "SYNTH") -> Book:
    pages = tuple(
        gen_page(replace(config, seed=config.seed * 1_000_003 + i), title, i) for i in range(n_pages)
    )
    names = sorted({c.character_name for p in pages for c in p.characters})
    return Book(title, pages, {n: f"Character {n}" for n in names})


# ------------------------------------------------------------------- layouts

def random_layout(rng: random.Random, max_frames: int = ORACLE_MAX_FRAMES) -> tuple[list[Frame], float, float]:
    """Tiered manga layout of 1..max_frames frames with jittered, possibly overlapping edges.

    Each tier holds 1-3 columns; at most one column per tier is split into
    stacked rows of one or two frames. Draws are repeated until every frame is
    at least four cut tolerances wide and tall and no two frames overlap once
    shrunk by the tolerance.
    """
    while True:
        W, H = rng.uniform(500, 1800), rng.uniform(700, 1800)
        boxes: list[tuple[float, float, float, float]] = []
        n_tiers = rng.randint(1, 4)
        tiers = _unit_spans(rng, n_tiers, 0.04)
        for ty0, ty1 in tiers:
            cols = _unit_spans(rng, rng.randint(1, 3), 0.04)
            split_col = rng.randrange(len(cols)) if rng.random() < 0.5 else None
            for ci, (cx0, cx1) in enumerate(cols):
                if ci != split_col:
                    boxes.append((cx0, ty0, cx1, ty1))
                    continue
                for ry0, ry1 in _unit_spans(rng, 2, 0.04, ty0, ty1):
                    for rx0, rx1 in _unit_spans(rng, rng.randint(1, 2), 0.04, cx0, cx1):
                        boxes.append((rx0, ry0, rx1, ry1))
        if len(boxes) > max_frames:
            continue
        frames = []
        for n, (x0, y0, x1, y1) in enumerate(boxes):
            j = [rng.uniform(-0.02, 0.02) for _ in range(4)]
            fx0 = min(max((x0 + j[0]) * W, 0.0), W)
            fy0 = min(max((y0 + j[1]) * H, 0.0), H)
            fx1 = min(max((x1 + j[2]) * W, fx0), W)
            fy1 = min(max((y1 + j[3]) * H, fy0), H)
            frames.append(Frame(f"f{n}", BBox(fx0, fy0, fx1, fy1)))
        if _well_formed(frames, CUT_TOLERANCE * W, CUT_TOLERANCE * H):
            rng.shuffle(frames)
            return frames, W, H


def _well_formed(frames: Sequence[Frame], tau_x: float, tau_y: float) -> bool:
    shrunk = []
    for f in frames:
        b = f.bbox
        if b.width <= 4 * tau_x or b.height <= 4 * tau_y:
            return False
        shrunk.append((b.x_min + tau_x, b.y_min + tau_y, b.x_max - tau_x, b.y_max - tau_y))
    for a, b in itertools.combinations(shrunk, 2):
        if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
            return False
    return True


def _unit_spans(rng: random.Random, n: int, gutter: float, lo: float = 0.03, hi: float = 0.97) -> list[tuple[float, float]]:
    return _spans(rng, lo, hi, n, gutter * (hi - lo))


# ------------------------------------------------------------------- oracles

def oracle_reading_order(
    frames: Sequence[Frame],
    page_width: float,
    page_height: float,
    *,
    rtl: bool = True,
    tolerance: float = CUT_TOLERANCE,
) -> list[str]:
    """Reading order by exhaustive search over permutations.

    ``a`` must precede ``b`` when a's shrunk box lies wholly above b's; failing
    that (in either direction), when a's shrunk box lies wholly on the leading
    side (right for manga). Among all permutations honouring every such
    constraint, the first in (y-centroid asc, x-centroid desc) lexicographic
    enumeration is returned.
    """
    n = len(frames)
    if n > ORACLE_MAX_FRAMES:
        raise ValueError("oracle scale exceeded")
    tx, ty = tolerance * page_width, tolerance * page_height
    info = []
    for f in frames:
        cx, cy = centroid(f.bbox)
        top, bottom = shrink_interval(f.bbox.y_min, f.bbox.y_max, ty)
        left, right = shrink_interval(f.bbox.x_min, f.bbox.x_max, tx)
        info.append((f.id, cx, cy, top, bottom, left, right))

    def above(a, b) -> bool:
        return a[4] <= b[3] and a[2] < b[2]

    def leading(a, b) -> bool:
        if rtl:
            return b[6] <= a[5] and a[1] > b[1]
        return a[6] <= b[5] and a[1] < b[1]

    def before(a, b) -> bool:
        if above(a, b):
            return True
        return not above(b, a) and leading(a, b)

    key = (lambda r: (r[2], -r[1], r[0])) if rtl else (lambda r: (r[2], r[1], r[0]))
    info.sort(key=key)
    constraints = [(i, j) for i in range(n) for j in range(n) if i != j and before(info[i], info[j])]
    for perm in itertools.permutations(range(n)):
        pos = [0] * n
        for p, i in enumerate(perm):
            pos[i] = p
        if all(pos[i] < pos[j] for i, j in constraints):
            return [info[i][0] for i in perm]
    raise ValueError("precedence constraints are cyclic")


def oracle_select(scores: ScoreMatrix, counts: Mapping[str, int]) -> Prediction:
    """Per-text top-N by a full sort of every (character, text) entry."""
    entries = sorted(scores.entries().items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    rankings, flagged = {}, set()
    for text_id, n in counts.items():
        ranked = [(c, s) for (c, t), s in entries if t == text_id]
        if n > len(ranked):
            flagged.add(text_id)
        rankings[text_id] = ranked[:n]
    return Prediction(rankings, frozenset(flagged))


def random_scores(rng: random.Random, n_chars: int, n_texts: int, levels: Optional[int] = None) -> ScoreMatrix:
    """Uniform [0,1] matrix; with ``levels`` set, values are quantised to force ties."""
    vals = []
    for _ in range(n_chars * n_texts):
        v = rng.random()
        vals.append(math.floor(v * levels) / levels if levels else v)
    return ScoreMatrix(
        "RANDOM",
        0,
        tuple(f"b{i}" for i in range(n_chars)),
        tuple(f"t{j}" for j in range(n_texts)),
        vals,
        Provenance.EXTERNAL,
    )
