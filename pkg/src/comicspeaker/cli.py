"""Command-line entry point: ingest, stats, order, predict, eval, viz, synth.

Options may also come from a JSON file given with ``--config`` (keys are
option names, e.g. ``{"predictor": "frame", "mode": "PredCls"}``); flags
on the command line win. ``--dataset`` falls back to $MANGA_DATASET_ROOT.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import click

from comicspeaker.dataset import (
    DATASET_ENV,
    book_to_xml,
    dataset_stats,
    label_dataset,
    load_dataset,
    pair_records,
    split_dataset,
)
from comicspeaker.frame_order import assign_page
from comicspeaker.metrics import MatchCriteria, Mode, evaluate, make_predictor
from comicspeaker.model import Dataset, Page
from comicspeaker.predictors import PREDICTORS, ExternalScores, load_detections, rank, select_per_text
from comicspeaker.synth import Scenario, SynthConfig, gen_book
from comicspeaker.viz import render_svg

log = logging.getLogger("comicspeaker")


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    pairs: Optional[Path] = None
    predictor: str = "frame"
    mode: Mode = Mode.PREDCLS
    difficulty: str = "all"
    split: str = "all"
    seed: int = 0
    train_fraction: float = 0.7
    scores: Optional[Path] = None
    detections: Optional[Path] = None
    iou_threshold: float = 0.5
    out: Optional[Path] = None
    rtl: bool = True

    def __post_init__(self) -> None:
        if self.predictor not in PREDICTORS:
            raise click.UsageError(f"unknown predictor {self.predictor!r}; choose from {', '.join(PREDICTORS)}")
        if self.predictor.startswith("external") and self.scores is None:
            raise click.UsageError(f"predictor {self.predictor!r} requires --scores")
        if self.mode is not Mode.PREDCLS and self.detections is None:
            raise click.UsageError(f"mode {self.mode.value} requires --detections")
        if self.mode is not Mode.PREDCLS and self.predictor in ("shortest", "frame"):
            # rule scores are negated distances; label probabilities cannot scale them
            raise click.UsageError(f"mode {self.mode.value} needs a [0, 1] scorer, not {self.predictor!r}")


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n" for r in rows)


def _dataset_root(value: Optional[str]) -> Path:
    value = value or os.environ.get(DATASET_ENV)
    if not value:
        raise click.UsageError(f"--dataset not given and ${DATASET_ENV} is unset")
    return Path(value)


def _load(root: Path, pairs: Optional[Path], rtl: bool) -> Dataset:
    try:
        return label_dataset(load_dataset(root, pairs), rtl=rtl)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from None


def _select_pages(dataset: Dataset, book: Optional[str], page: Optional[int]) -> list[Page]:
    pages = [p for p in dataset.pages() if book is None or p.book_title == book]
    if book is not None and not pages:
        raise click.ClickException(f"no book titled {book!r}")
    if page is not None:
        pages = [p for p in pages if p.page_index == page]
        if not pages:
            raise click.ClickException(f"page {page} out of range")
    return pages


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        write_atomic(out, text)


# Shared options ---------------------------------------------------------------

dataset_opt = click.option("--dataset", type=click.Path(file_okay=False), help=f"Dataset root (default ${DATASET_ENV}).")
pairs_opt = click.option("--pairs", type=click.Path(exists=True, path_type=Path), help="Pair file (JSONL) or Manga109Dialog XML dir.")
out_opt = click.option("--out", type=click.Path(path_type=Path), help="Output path.")
rtl_opt = click.option("--rtl/--ltr", default=True, show_default=True, help="Reading direction.")
book_opt = click.option("--book", help="Restrict to one book title.")
page_opt = click.option("--page", type=int, help="Restrict to one page index.")
predictor_opt = click.option("--predictor", default="frame", show_default=True, help=f"One of: {', '.join(PREDICTORS)}.")
scores_opt = click.option("--scores", type=click.Path(exists=True, path_type=Path), help="External score JSONL.")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file.")
@click.option("-v", "--verbose", is_flag=True, help="Log warnings from loading.")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], verbose: bool) -> None:
    """Speaker attribution toolkit for comic pages."""
    logging.basicConfig(level=logging.WARNING if verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise click.UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        ctx.default_map = {name: cfg for name in main.commands}


@main.command()
@dataset_opt
@pairs_opt
@out_opt
@rtl_opt
def ingest(dataset, pairs, out, rtl):
    """Validate annotations + pairs and write canonical pair JSONL."""
    data = _load(_dataset_root(dataset), pairs, rtl)
    records = pair_records(data.books)
    if out is not None:
        write_atomic(out, _jsonl(records))
    stats = dataset_stats(data)
    click.echo(json.dumps({"books": stats.books, "pages": stats.pages, "texts": stats.texts, "pairs": len(records)}))


@main.command()
@dataset_opt
@pairs_opt
@out_opt
@rtl_opt
@click.option("--split", type=click.Choice(["all", "train", "test"]), default="all", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=0.7, show_default=True)
def stats(dataset, pairs, out, rtl, split, seed, train_fraction):
    """Corpus statistics: annotated images, texts, Easy/Hard/Total pairs."""
    data = _load(_dataset_root(dataset), pairs, rtl)
    if split != "all":
        data = split_dataset(data, train_fraction, seed).select(split)
    report = dataset_stats(data)
    click.echo(report.table())
    if out is not None:
        write_atomic(out, json.dumps(report.to_json(), indent=2) + "\n")


@main.command()
@dataset_opt
@book_opt
@page_opt
@out_opt
@rtl_opt
def order(dataset, book, page, out, rtl):
    """Frame reading order and per-object frame index, one JSON line per page."""
    data = _load(_dataset_root(dataset), None, rtl)
    rows = []
    for p in _select_pages(data, book, page):
        fo, assignment = assign_page(p, rtl=rtl)
        rows.append(
            {
                "book": p.book_title,
                "page": p.page_index,
                "order": [f.id for f in fo.ordered_frames],
                "assignments": {oid: a.k for oid, a in assignment.items()},
            }
        )
    _emit(_jsonl(rows), out)


@main.command()
@dataset_opt
@pairs_opt
@predictor_opt
@scores_opt
@book_opt
@page_opt
@out_opt
@rtl_opt
def predict(dataset, pairs, predictor, scores, book, page, out, rtl):
    """Ranked speaker candidates for every text, one JSON line per text."""
    cfg = RunConfig(_dataset_root(dataset), pairs, predictor, scores=scores, rtl=rtl)
    data = _load(cfg.dataset, cfg.pairs, rtl)
    external = ExternalScores.load(scores) if scores else None
    score_fn = make_predictor(predictor, external, rtl=rtl)
    rows = []
    for p in _select_pages(data, book, page):
        ranking = rank(score_fn(p))
        for text_id, ranked in ranking.rankings.items():
            rows.append({"book": p.book_title, "page": p.page_index, "text": text_id, "ranking": [[c, s] for c, s in ranked]})
    _emit(_jsonl(rows), out)


@main.command("eval")
@dataset_opt
@pairs_opt
@predictor_opt
@scores_opt
@click.option("--detections", type=click.Path(exists=True, path_type=Path), help="Detection JSONL (SGCls/SGDet).")
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default="PredCls", show_default=True)
@click.option("--difficulty", type=click.Choice(["all", "easy", "hard"]), default="all", show_default=True)
@click.option("--split", type=click.Choice(["all", "train", "test"]), default="all", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=0.7, show_default=True)
@click.option("--iou", "iou_threshold", type=float, default=0.5, show_default=True)
@out_opt
@rtl_opt
def eval_cmd(dataset, pairs, predictor, scores, detections, mode, difficulty, split, seed, train_fraction, iou_threshold, out, rtl):
    """Recall@(#text) per difficulty for one predictor."""
    cfg = RunConfig(
        _dataset_root(dataset), pairs, predictor, Mode(mode), difficulty, split, seed, train_fraction,
        scores, detections, iou_threshold, out, rtl,
    )
    if cfg.pairs is None:
        raise click.UsageError("eval needs --pairs")
    data = _load(cfg.dataset, cfg.pairs, rtl)
    if split != "all":
        data = split_dataset(data, train_fraction, seed).select(split)
    external = ExternalScores.load(scores) if scores else None
    dets = load_detections(detections) if detections else None
    report = evaluate(
        make_predictor(predictor, external, rtl=rtl),
        data.pages(),
        MatchCriteria(cfg.mode, iou_threshold),
        difficulty,
        name=predictor,
        detections=dets,
    )
    click.echo(report.table())
    for b, p, err in report.failed_pages:
        click.echo(f"failed: {b} p{p}: {err}", err=True)
    if out is not None:
        payload = report.to_json(with_pages=True)
        payload.update(split=split, seed=seed, difficulty=difficulty)
        write_atomic(out, json.dumps(payload, indent=2) + "\n")


@main.command()
@dataset_opt
@pairs_opt
@predictor_opt
@scores_opt
@book_opt
@page_opt
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True, help="Output directory.")
@rtl_opt
def viz(dataset, pairs, predictor, scores, book, page, out, rtl):
    """One SVG per page: frames with order labels, boxes, green/red speaker links."""
    cfg = RunConfig(_dataset_root(dataset), pairs, predictor, scores=scores, rtl=rtl)
    data = _load(cfg.dataset, cfg.pairs, rtl)
    external = ExternalScores.load(scores) if scores else None
    score_fn = make_predictor(predictor, external, rtl=rtl)
    written = 0
    for p in _select_pages(data, book, page):
        fo, _ = assign_page(p, rtl=rtl)
        prediction = select_per_text(score_fn(p), p.gt_count()) if p.pairs and p.characters else None
        write_atomic(out / f"{p.book_title}_{p.page_index:03d}.svg", render_svg(p, prediction, fo))
        written += 1
    click.echo(f"wrote {written} SVG file(s) to {out}")


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--books", "n_books", type=int, default=1, show_default=True)
@click.option("--pages", "n_pages", type=int, default=10, show_default=True, help="Pages per book.")
@click.option("--scenario", type=click.Choice([s.value for s in Scenario]), default=Scenario.MIXED.value, show_default=True)
@click.option("--hard-ratio", type=float, default=0.2, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True, help="Output dataset root.")
def synth(seed, n_books, n_pages, scenario, hard_ratio, out):
    """Write a synthetic dataset: annotations/*.xml, pairs.jsonl, manifest.json."""
    config = SynthConfig(seed=seed, scenario=Scenario(scenario), hard_ratio=hard_ratio)
    books = [
        gen_book(replace(config, seed=seed * 7919 + b), n_pages, f"SYNTH{b:02d}")
        for b in range(n_books)
    ]
    for book in books:
        write_atomic(out / "annotations" / f"{book.title}.xml", book_to_xml(book))
    write_atomic(out / "pairs.jsonl", _jsonl(pair_records(books)))
    manifest = {"seed": seed, "scenario": scenario, "hard_ratio": hard_ratio, "stats": dataset_stats(books).to_json()}
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    click.echo(dataset_stats(books).table())


if __name__ == "__main__":
    main()
