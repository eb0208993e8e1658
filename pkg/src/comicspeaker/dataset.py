"""Manga109-style annotation ingestion, speaker-pair files, difficulty labels and corpus statistics.

Annotation XML layout::

    <book title="...">
      <characters><character id="..." name="..."/></characters>
      <pages>
        <page index="0" width="1654" height="1170">
          <frame id="..." xmin="..." ymin="..." xmax="..." ymax="..."/>
          <body id="..." xmin="..." ... character="..."/>
          <text id="..." xmin="..." ...>content</text>
        </page>
      </pages>
    </book>

Faces are ignored; speaker pairs always point at body boxes.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from comicspeaker.frame_order import FrameAssignment, assign_page
from comicspeaker.geometry import BBox, centroid_distance
from comicspeaker.model import Book, CharacterBox, Dataset, Difficulty, Frame, Page, SpeakerPair, TextBox

log = logging.getLogger(__name__)

DATASET_ENV = "MANGA_DATASET_ROOT"


class AnnotationError(ValueError):
    pass


class PairFileError(ValueError):
    def __init__(self, message: str, records: Sequence[object] = ()):
        super().__init__(message)
        self.records = list(records)


# --------------------------------------------------------------------------- XML

def _coord(el: ET.Element, name: str, where: str) -> float:
    raw = el.get(name)
    if raw is None:
        raise AnnotationError(f"{where}: <{el.tag} id={el.get('id')!r}> is missing attribute {name!r}")
    try:
        value = float(raw)
    except ValueError:
        raise AnnotationError(f"{where}: <{el.tag} id={el.get('id')!r}> has non-numeric {name}={raw!r}") from None
    if not math.isfinite(value):
        raise AnnotationError(f"{where}: <{el.tag} id={el.get('id')!r}> has non-finite {name}={raw!r}")
    return value


def _box(el: ET.Element, width: float, height: float, where: str) -> BBox:
    el_id = el.get("id")
    if el_id is None:
        raise AnnotationError(f"{where}: <{el.tag}> element without id")
    x0, y0, x1, y1 = (_coord(el, k, where) for k in ("xmin", "ymin", "xmax", "ymax"))
    if x0 > x1 or y0 > y1:
        raise AnnotationError(f"{where}: <{el.tag} id={el_id!r}> has inverted coordinates")
    cx0, cy0 = min(max(x0, 0.0), width), min(max(y0, 0.0), height)
    cx1, cy1 = min(max(x1, 0.0), width), min(max(y1, 0.0), height)
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        log.warning("%s: clamped <%s id=%s> to page bounds", where, el.tag, el_id)
    return BBox(cx0, cy0, cx1, cy1)


def _page_from_xml(el: ET.Element, title: str, image_root: Optional[Path]) -> Page:
    try:
        index = int(el.get("index", ""))
    except ValueError:
        raise AnnotationError(f"{title}: <page> without a valid index attribute") from None
    where = f"{title} p{index}"
    width, height = _coord(el, "width", where), _coord(el, "height", where)
    frames, chars, texts = [], [], []
    for child in el:
        if child.tag == "frame":
            frames.append(Frame(child.get("id"), _box(child, width, height, where)))
        elif child.tag == "body":
            name = child.get("character")
            if name is None:
                raise AnnotationError(f"{where}: <body id={child.get('id')!r}> is missing attribute 'character'")
            chars.append(CharacterBox(child.get("id"), _box(child, width, height, where), name))
        elif child.tag == "text":
            texts.append(TextBox(child.get("id"), _box(child, width, height, where), child.text))
    image = str(image_root / title / f"{index:03d}.jpg") if image_root is not None else None
    try:
        return Page(title, index, width, height, tuple(frames), tuple(chars), tuple(texts), image_path=image)
    except ValueError as exc:
        raise AnnotationError(str(exc)) from None


def load_book(annotation_file: str | os.PathLike, image_root: Optional[Path] = None) -> Book:
    path = Path(annotation_file)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise AnnotationError(f"{path}:{line}:{col}: malformed XML ({exc.msg})") from None
    if root.tag != "book":
        raise AnnotationError(f"{path}: root element is <{root.tag}>, expected <book>")
    title = root.get("title") or path.stem
    characters = {}
    chars_el = root.find("characters")
    if chars_el is not None:
        for c in chars_el.findall("character"):
            characters[c.get("id")] = c.get("name", "")
    pages = []
    pages_el = root.find("pages")
    if pages_el is not None:
        pages = [_page_from_xml(p, title, image_root) for p in pages_el.findall("page")]
    return Book(title, tuple(pages), characters)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _box_attrs(el: ET.Element, b: BBox) -> None:
    el.set("xmin", _fmt(b.x_min))
    el.set("ymin", _fmt(b.y_min))
    el.set("xmax", _fmt(b.x_max))
    el.set("ymax", _fmt(b.y_max))


def book_to_xml(book: Book) -> str:
    root = ET.Element("book", title=book.title)
    chars_el = ET.SubElement(root, "characters")
    for cid, name in book.characters.items():
        ET.SubElement(chars_el, "character", id=cid, name=name)
    pages_el = ET.SubElement(root, "pages")
    for page in book.pages:
        p = ET.SubElement(pages_el, "page", index=str(page.page_index), width=_fmt(page.width), height=_fmt(page.height))
        for f in page.frames:
            _box_attrs(ET.SubElement(p, "frame", id=f.id), f.bbox)
        for c in page.characters:
            el = ET.SubElement(p, "body", id=c.id)
            _box_attrs(el, c.bbox)
            el.set("character", c.character_name)
        for t in page.texts:
            el = ET.SubElement(p, "text", id=t.id)
            _box_attrs(el, t.bbox)
            el.text = t.content
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def write_book(book: Book, path: str | os.PathLike) -> None:
    Path(path).write_text(book_to_xml(book), encoding="utf-8")


def annotation_files(root: str | os.PathLike) -> list[Path]:
    root = Path(root)
    ann = root / "annotations"
    base = ann if ann.is_dir() else root
    files = sorted(base.glob("*.xml"))
    if not files:
        raise FileNotFoundError(f"no annotation XML files under {root}")
    return files


def load_books(root: str | os.PathLike) -> list[Book]:
    root = Path(root)
    images = root / "images"
    return [load_book(f, images) for f in annotation_files(root)]


# ------------------------------------------------------------------- pair files

def read_pair_records(pair_file: str | os.PathLike) -> list[dict]:
    """Canonical JSON Lines: {"book", "page", "text_id", "speaker_ids"} per line."""
    records = []
    with open(pair_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PairFileError(f"{pair_file}:{lineno}: {exc.msg}") from None
            missing = {"book", "page", "text_id", "speaker_ids"} - rec.keys()
            if missing:
                raise PairFileError(f"{pair_file}:{lineno}: missing fields {sorted(missing)}", [rec])
            records.append(rec)
    return records


def write_pair_records(records: Iterable[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def pair_records(books: Iterable[Book]) -> list[dict]:
    return [
        {"book": b.title, "page": p.page_index, "text_id": pair.text_id, "speaker_ids": list(pair.speaker_box_ids)}
        for b in books
        for p in b.pages
        for pair in p.pairs
    ]


def attach_pairs(book: Book, records: Iterable[dict]) -> Book:
    by_page: dict[int, list[dict]] = defaultdict(list)
    for rec in records:
        if rec["book"] == book.title:
            by_page[int(rec["page"])].append(rec)
    pages = {p.page_index: p for p in book.pages}
    bad = [rec for idx, recs in by_page.items() if idx not in pages for rec in recs]
    new_pages = []
    for page in book.pages:
        recs = by_page.get(page.page_index, [])
        text_ids = {t.id for t in page.texts}
        char_ids = {c.id for c in page.characters}
        pairs, seen = [], set()
        for rec in recs:
            speakers = tuple(rec["speaker_ids"])
            if (
                rec["text_id"] not in text_ids
                or not speakers
                or any(s not in char_ids for s in speakers)
                or len(set(speakers)) != len(speakers)
                or rec["text_id"] in seen
            ):
                bad.append(rec)
                continue
            seen.add(rec["text_id"])
            pairs.append(SpeakerPair(rec["text_id"], speakers))
        new_pages.append(page.with_pairs(pairs))
    if bad:
        shown = ", ".join(f"p{r['page']}:{r['text_id']}->{r['speaker_ids']}" for r in bad[:10])
        raise PairFileError(f"{book.title}: {len(bad)} pair record(s) with dangling or duplicate ids: {shown}", bad)
    return replace(book, pages=tuple(new_pages))


def load_pairs(pair_file: str | os.PathLike, book: Book) -> Book:
    return attach_pairs(book, read_pair_records(pair_file))


def dialog_xml_records(path: str | os.PathLike) -> list[dict]:
    """Convert one published Manga109Dialog book file into canonical pair records.

    Expects ``<book title><pages><page index><speaker_to_text text_id speaker_id/>``;
    links sharing a text id are merged into one multi-speaker record.
    """
    root = ET.parse(path).getroot()
    title = root.get("title") or Path(path).stem
    out = []
    for page in root.iter("page"):
        index = int(page.get("index"))
        grouped: dict[str, list[str]] = {}
        for link in page:
            text_id, speaker_id = link.get("text_id"), link.get("speaker_id")
            if text_id is None or speaker_id is None:
                continue
            speakers = grouped.setdefault(text_id, [])
            if speaker_id not in speakers:
                speakers.append(speaker_id)
        out.extend({"book": title, "page": index, "text_id": t, "speaker_ids": s} for t, s in grouped.items())
    return out


def load_pair_source(source: str | os.PathLike) -> list[dict]:
    """Canonical JSONL file, or a directory / single file of Manga109Dialog XML."""
    source = Path(source)
    if source.is_dir():
        files = sorted(source.glob("*.xml"))
        if not files:
            raise FileNotFoundError(f"no pair files under {source}")
        return [r for f in files for r in dialog_xml_records(f)]
    if source.suffix == ".xml":
        return dialog_xml_records(source)
    return read_pair_records(source)


def load_dataset(root: str | os.PathLike, pairs: Optional[str | os.PathLike] = None) -> Dataset:
    books = load_books(root)
    if pairs is not None:
        records = load_pair_source(pairs)
        titles = {b.title for b in books}
        orphans = [r for r in records if r["book"] not in titles]
        if orphans:
            raise PairFileError(f"{len(orphans)} pair record(s) reference unknown books", orphans)
        books = [attach_pairs(b, records) for b in books]
    return Dataset(tuple(books))


# --------------------------------------------------------- resolution / labels

def _shares_frame(a: str, b: str, membership: FrameAssignment) -> bool:
    return membership[a].frame_id == membership[b].frame_id


def resolve_speaker_boxes(
    page: Page,
    name_pairs: Iterable[tuple[str, str]],
    membership: Optional[FrameAssignment] = None,
) -> tuple[list[SpeakerPair], list[tuple[str, str]]]:
    """Turn (text_id, character_name) links into box-level pairs.

    Prefers a box of that character in the text's frame, else the nearest box.
    Returns the pairs and the skipped links whose character has no box on the page.
    """
    if membership is None:
        _, membership = assign_page(page)
    merged: dict[str, list[str]] = {}
    skipped = []
    for text_id, name in name_pairs:
        text = page.text(text_id)
        candidates = [c for c in page.characters if c.character_name == name]
        if not candidates:
            skipped.append((text_id, name))
            continue
        same = [c for c in candidates if _shares_frame(c.id, text_id, membership)]
        pool = same or candidates
        best = min(pool, key=lambda c: (centroid_distance(c.bbox, text.bbox), c.id))
        speakers = merged.setdefault(text_id, [])
        if best.id not in speakers:
            speakers.append(best.id)
    if skipped:
        log.warning("%s p%d: %d name link(s) without a matching body", page.book_title, page.page_index, len(skipped))
    return [SpeakerPair(t, tuple(s)) for t, s in merged.items()], skipped


def assign_difficulty(page: Page, membership: FrameAssignment) -> Page:
    labeled = []
    for pair in page.pairs:
        easy = any(_shares_frame(s, pair.text_id, membership) for s in pair.speaker_box_ids)
        labeled.append(replace(pair, difficulty=Difficulty.EASY if easy else Difficulty.HARD))
    return page.with_pairs(labeled)


def label_book(book: Book, *, rtl: bool = True) -> Book:
    pages = []
    for page in book.pages:
        _, membership = assign_page(page, rtl=rtl)
        pages.append(assign_difficulty(page, membership))
    return replace(book, pages=tuple(pages))


def label_dataset(dataset: Dataset, *, rtl: bool = True) -> Dataset:
    return replace(dataset, books=tuple(label_book(b, rtl=rtl) for b in dataset.books))


# ------------------------------------------------------------------ statistics

@dataclass(frozen=True)
class StatsReport:
    books: int
    pages: int
    annotated_images: int
    texts: int
    easy: int
    hard: int
    total: int
    pairs_per_page: float

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        head = ["Annotated images", "Texts", "Easy", "Hard", "Total", "Pairs / page"]
        row = [
            f"{self.annotated_images:,}",
            f"{self.texts:,}",
            f"{self.easy:,}",
            f"{self.hard:,}",
            f"{self.total:,}",
            f"{self.pairs_per_page:.2f}",
        ]
        widths = [max(len(h), len(v)) for h, v in zip(head, row)]
        lines = [
            "  ".join(h.rjust(w) for h, w in zip(head, widths)),
            "  ".join("-" * w for w in widths),
            "  ".join(v.rjust(w) for v, w in zip(row, widths)),
        ]
        return "\n".join(lines)


def dataset_stats(dataset: Dataset | Iterable[Book]) -> StatsReport:
    """Pair counts are speaker-to-text links; a multi-speaker text contributes one per speaker."""
    books = dataset.books if isinstance(dataset, Dataset) else tuple(dataset)
    pages = annotated = texts = easy = hard = 0
    for book in books:
        for page in book.pages:
            pages += 1
            texts += len(page.texts)
            if page.pairs:
                annotated += 1
            for pair in page.pairs:
                n = len(pair.speaker_box_ids)
                if pair.difficulty is Difficulty.EASY:
                    easy += n
                elif pair.difficulty is Difficulty.HARD:
                    hard += n
    total = sum(len(p.speaker_box_ids) for b in books for pg in b.pages for p in pg.pairs)
    return StatsReport(
        books=len(books),
        pages=pages,
        annotated_images=annotated,
        texts=texts,
        easy=easy,
        hard=hard,
        total=total,
        pairs_per_page=total / annotated if annotated else 0.0,
    )


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> Dataset:
    """Book-level train/test split; at least one book lands on each side."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    titles = sorted(b.title for b in dataset.books)
    if len(titles) < 2:
        raise ValueError("splitting needs at least 2 books")
    n_train = min(max(round(train_fraction * len(titles)), 1), len(titles) - 1)
    random.Random(seed).shuffle(titles)
    split = {t: ("train" if i < n_train else "test") for i, t in enumerate(titles)}
    return replace(dataset, split=split)
