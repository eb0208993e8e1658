"""In-memory model of annotated comic pages."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from comicspeaker.geometry import BBox


class Difficulty(str, enum.Enum):
    EASY = "Easy"
    HARD = "Hard"
    UNASSIGNED = "Unassigned"


@dataclass(frozen=True)
class Frame:
    id: str
    bbox: BBox


@dataclass(frozen=True)
class CharacterBox:
    id: str
    bbox: BBox
    # Identity label of the depicted character (the ``character`` attribute in Manga109 XML).
    character_name: str


@dataclass(frozen=True)
class TextBox:
    id: str
    bbox: BBox
    content: Optional[str] = None


@dataclass(frozen=True)
class SpeakerPair:
    text_id: str
    speaker_box_ids: tuple[str, ...]
    difficulty: Difficulty = Difficulty.UNASSIGNED

    def __post_init__(self) -> None:
        if not self.speaker_box_ids:
            raise ValueError(f"pair for text {self.text_id} has no speakers")
        if len(set(self.speaker_box_ids)) != len(self.speaker_box_ids):
            raise ValueError(f"pair for text {self.text_id} lists a speaker twice")


@dataclass(frozen=True)
class Page:
    book_title: str
    page_index: int
    width: float
    height: float
    frames: tuple[Frame, ...] = ()
    characters: tuple[CharacterBox, ...] = ()
    texts: tuple[TextBox, ...] = ()
    pairs: tuple[SpeakerPair, ...] = ()
    image_path: Optional[str] = None

    def __post_init__(self) -> None:
        ids = [o.id for o in (*self.frames, *self.characters, *self.texts)]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"{self.book_title} p{self.page_index}: duplicate element ids {dupes}")
        char_ids = {c.id for c in self.characters}
        text_ids = {t.id for t in self.texts}
        for p in self.pairs:
            if p.text_id not in text_ids:
                raise ValueError(f"{self.book_title} p{self.page_index}: pair references unknown text {p.text_id}")
            missing = [s for s in p.speaker_box_ids if s not in char_ids]
            if missing:
                raise ValueError(
                    f"{self.book_title} p{self.page_index}: pair for {p.text_id} references unknown bodies {missing}"
                )

    @property
    def diagonal(self) -> float:
        return (self.width ** 2 + self.height ** 2) ** 0.5

    def character(self, char_id: str) -> CharacterBox:
        for c in self.characters:
            if c.id == char_id:
                return c
        raise KeyError(char_id)

    def text(self, text_id: str) -> TextBox:
        for t in self.texts:
            if t.id == text_id:
                return t
        raise KeyError(text_id)

    def with_pairs(self, pairs) -> "Page":
        return replace(self, pairs=tuple(pairs))

    def gt_count(self) -> dict[str, int]:
        return {p.text_id: len(p.speaker_box_ids) for p in self.pairs}


@dataclass(frozen=True)
class Book:
    title: str
    pages: tuple[Page, ...] = ()
    # character id -> display name, from the <characters> table
    characters: dict[str, str] = field(default_factory=dict)

    def page(self, index: int) -> Page:
        for p in self.pages:
            if p.page_index == index:
                return p
        raise KeyError(f"{self.title} has no page {index}")


@dataclass(frozen=True)
class Dataset:
    books: tuple[Book, ...]
    # book title -> "train" | "test"; empty until split_dataset runs
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.split:
            titles = {b.title for b in self.books}
            if set(self.split) != titles:
                raise ValueError("split assignment must cover every book exactly once")
            bad = {v for v in self.split.values()} - {"train", "test"}
            if bad:
                raise ValueError(f"unknown split labels {bad}")

    def pages(self, split: str = "all") -> Iterator[Page]:
        for book in self.books:
            if split != "all" and self.split.get(book.title) != split:
                continue
            yield from book.pages

    def select(self, split: str) -> "Dataset":
        if split == "all":
            return self
        if not self.split:
            raise ValueError("dataset has no split assignment")
        return Dataset(tuple(b for b in self.books if self.split[b.title] == split))
