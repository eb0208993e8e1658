"""SVG overlay of frames, boxes and predicted speaker links for one page.

Links run from the predicted speaker's centroid to the text's centroid:
green when the ground truth lists that speaker, red otherwise.
"""

from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape, quoteattr

from comicspeaker.frame_order import FrameOrder, order_frames
from comicspeaker.geometry import BBox, centroid
from comicspeaker.model import Page
from comicspeaker.predictors import Prediction

CORRECT = "#1aff1a"
WRONG = "#ff1a1a"
FRAME_COLOR = "#3366ff"
CHAR_COLOR = "#ff9900"
TEXT_COLOR = "#9933ff"


def _n(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return s if s not in ("-0", "") else "0"


def _rect(b: BBox, color: str, cls: str, width: float) -> str:
    return (
        f'<rect class="{cls}" x="{_n(b.x_min)}" y="{_n(b.y_min)}" width="{_n(b.width)}" '
        f'height="{_n(b.height)}" fill="none" stroke="{color}" stroke-width="{_n(width)}"/>'
    )


def render_svg(page: Page, prediction: Optional[Prediction] = None, order: Optional[FrameOrder] = None) -> str:
    if order is None:
        order = order_frames(page.frames, page.width, page.height)
    stroke = max(page.width, page.height) / 400
    font = max(page.width, page.height) / 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'viewBox="0 0 {_n(page.width)} {_n(page.height)}" width="{_n(page.width)}" height="{_n(page.height)}">',
        f"<title>{escape(page.book_title)} page {page.page_index}</title>",
    ]
    if page.image_path:
        out.append(
            f'<image xlink:href={quoteattr(page.image_path)} x="0" y="0" '
            f'width="{_n(page.width)}" height="{_n(page.height)}"/>'
        )
    for k, f in enumerate(order.ordered_frames, start=1):
        out.append(_rect(f.bbox, FRAME_COLOR, "frame", stroke))
        out.append(
            f'<text class="order" x="{_n(f.bbox.x_max - font)}" y="{_n(f.bbox.y_min + font)}" '
            f'font-size="{_n(font)}" fill="{FRAME_COLOR}">{k}</text>'
        )
    for c in page.characters:
        out.append(_rect(c.bbox, CHAR_COLOR, "character", stroke))
    for t in page.texts:
        out.append(_rect(t.bbox, TEXT_COLOR, "text", stroke))
    if prediction is not None:
        truth = {p.text_id: set(p.speaker_box_ids) for p in page.pairs}
        chars = {c.id: c for c in page.characters}
        texts = {t.id: t for t in page.texts}
        for text_id in sorted(prediction.rankings):
            if text_id not in texts:
                continue
            tx, ty = centroid(texts[text_id].bbox)
            for char_id, _ in prediction.rankings[text_id]:
                cx, cy = centroid(chars[char_id].bbox)
                ok = char_id in truth.get(text_id, ())
                out.append(
                    f'<line class="{"correct" if ok else "wrong"}" x1="{_n(cx)}" y1="{_n(cy)}" '
                    f'x2="{_n(tx)}" y2="{_n(ty)}" stroke="{CORRECT if ok else WRONG}" '
                    f'stroke-width="{_n(2 * stroke)}"/>'
                )
    out.append("</svg>")
    return "\n".join(out) + "\n"
