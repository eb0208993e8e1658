"""Frame reading order by recursive horizontal/vertical cuts, and object-to-frame assignment.

Reading direction defaults to Japanese manga: top to bottom, right to left.
Frames are shrunk by a tolerance (a fraction of the page dimension
perpendicular to the cut) before cut lines are tested, so panels that
overlap slightly still separate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from comicspeaker.geometry import BBox, DegenerateBoxError, centroid, centroid_distance, overlap_fraction
from comicspeaker.model import Frame, Page

CUT_TOLERANCE = 0.03


@dataclass(frozen=True)
class FrameOrder:
    ordered_frames: tuple[Frame, ...]
    order_index: dict[str, int]

    def k(self, frame_id: str) -> int:
        return self.order_index[frame_id]


@dataclass(frozen=True)
class Assignment:
    frame_id: Optional[str]
    k: int
    fallback: bool = False


# object id -> Assignment
FrameAssignment = dict[str, Assignment]


def shrink_interval(lo: float, hi: float, tau: float) -> tuple[float, float]:
    a, b = lo + tau, hi - tau
    if a > b:
        mid = (lo + hi) / 2
        return mid, mid
    return a, b


@dataclass(frozen=True)
class _Item:
    frame: Frame
    cx: float
    cy: float
    top: float
    bottom: float
    left: float
    right: float


def _items(frames: Iterable[Frame], tau_x: float, tau_y: float) -> list[_Item]:
    out = []
    for f in frames:
        b = f.bbox
        cx, cy = centroid(b)
        top, bottom = shrink_interval(b.y_min, b.y_max, tau_y)
        left, right = shrink_interval(b.x_min, b.x_max, tau_x)
        out.append(_Item(f, cx, cy, top, bottom, left, right))
    return out


def _horizontal_cut(group: list[_Item]) -> Optional[int]:
    """Index splitting ``group`` (sorted by cy) into upper/lower parts, or None."""
    best, best_gap = None, -1.0
    bottoms = [it.bottom for it in group]
    tops = [it.top for it in group]
    n = len(group)
    for i in range(1, n):
        if group[i - 1].cy >= group[i].cy:
            continue
        gap = min(tops[i:]) - max(bottoms[:i])
        # strict '>' keeps the topmost cut among equal gaps
        if gap >= 0 and gap > best_gap:
            best, best_gap = i, gap
    return best


def _above(a: _Item, b: _Item) -> bool:
    return a.bottom <= b.top and a.cy < b.cy


def _vertical_cut(group: list[_Item], rtl: bool) -> Optional[int]:
    """Index splitting ``group`` (sorted leading column first) into two columns, or None.

    Cuts that would read a frame before one lying strictly above it are only
    used when no other cut exists; otherwise the widest gutter wins.
    """
    best, best_key = None, (False, -1.0)
    n = len(group)
    for i in range(1, n):
        lead, rest = group[:i], group[i:]
        if group[i - 1].cx == group[i].cx:
            continue
        if rtl:
            gap = min(it.left for it in lead) - max(it.right for it in rest)
        else:
            gap = min(it.left for it in rest) - max(it.right for it in lead)
        if gap < 0:
            continue
        keeps_rows = not any(_above(r, l) for r in rest for l in lead)
        key = (keeps_rows, gap)
        # strict '>' keeps the leading cut among equal keys
        if best is None or key > best_key:
            best, best_key = i, key
    return best


def _base_key(rtl: bool):
    if rtl:
        return lambda it: (it.cy, -it.cx, it.frame.id)
    return lambda it: (it.cy, it.cx, it.frame.id)


def _order(group: list[_Item], rtl: bool) -> list[_Item]:
    if len(group) <= 1:
        return group
    by_y = sorted(group, key=lambda it: (it.cy, it.frame.id))
    cut = _horizontal_cut(by_y)
    if cut is not None:
        return _order(by_y[:cut], rtl) + _order(by_y[cut:], rtl)
    if rtl:
        by_x = sorted(group, key=lambda it: (-it.cx, it.frame.id))
    else:
        by_x = sorted(group, key=lambda it: (it.cx, it.frame.id))
    cut = _vertical_cut(by_x, rtl)
    if cut is not None:
        return _order(by_x[:cut], rtl) + _order(by_x[cut:], rtl)
    return sorted(group, key=_base_key(rtl))


def order_frames(
    frames: Sequence[Frame],
    page_width: float,
    page_height: float,
    *,
    rtl: bool = True,
    tolerance: float = CUT_TOLERANCE,
) -> FrameOrder:
    items = _items(frames, tolerance * page_width, tolerance * page_height)
    ordered = tuple(it.frame for it in _order(items, rtl))
    return FrameOrder(ordered, {f.id: k for k, f in enumerate(ordered, start=1)})


def assign_frame(b: BBox, order: FrameOrder) -> Assignment:
    """Frame holding the largest share of ``b``; nearest frame centroid when nothing overlaps."""
    if not order.ordered_frames:
        return Assignment(None, 1, fallback=True)
    best: Optional[tuple[float, int, Frame]] = None
    for k, f in enumerate(order.ordered_frames, start=1):
        try:
            share = overlap_fraction(b, f.bbox)
        except DegenerateBoxError:
            cx, cy = centroid(b)
            fb = f.bbox
            share = 1.0 if fb.x_min <= cx <= fb.x_max and fb.y_min <= cy <= fb.y_max else 0.0
        if best is None or share > best[0]:
            best = (share, k, f)
    if best[0] > 0:
        return Assignment(best[2].id, best[1])
    k, f = min(
        enumerate(order.ordered_frames, start=1),
        key=lambda kf: (centroid_distance(b, kf[1].bbox), kf[0]),
    )
    return Assignment(f.id, k, fallback=True)


def assign_page(page: Page, order: Optional[FrameOrder] = None, *, rtl: bool = True) -> tuple[FrameOrder, FrameAssignment]:
    if order is None:
        order = order_frames(page.frames, page.width, page.height, rtl=rtl)
    assignment = {o.id: assign_frame(o.bbox, order) for o in (*page.characters, *page.texts)}
    return order, assignment
