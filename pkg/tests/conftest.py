from __future__ import annotations

from pathlib import Path

import pytest

from comicspeaker.geometry import BBox
from comicspeaker.model import CharacterBox, Frame, Page, SpeakerPair, TextBox

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def grid_2x2() -> list[Frame]:
    return [
        Frame("TL", BBox(10, 10, 95, 95)),
        Frame("TR", BBox(105, 10, 190, 95)),
        Frame("BL", BBox(10, 105, 95, 190)),
        Frame("BR", BBox(105, 105, 190, 190)),
    ]


def make_page(frames=(), chars=(), texts=(), pairs=(), width=200.0, height=200.0, title="T", index=0) -> Page:
    """Page from compact tuples: chars as (id, [x0, y0, x1, y1][, name]), texts as (id, box), pairs as (text, [speakers])."""
    return Page(
        title,
        index,
        width,
        height,
        tuple(frames),
        tuple(CharacterBox(c[0], BBox(*c[1]), c[2] if len(c) > 2 else c[0]) for c in chars),
        tuple(TextBox(i, BBox(*b)) for i, b in texts),
        tuple(SpeakerPair(t, tuple(s)) for t, s in pairs),
    )


# (criterion, status, detail) rows collected by the acceptance module
ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{status:<4} {name}: {detail}")
