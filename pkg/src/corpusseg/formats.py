"""Text file formats for grids, proposal sets, models, and curves.

Grid headers are one of::

    SOFT H W K    followed by H*W lines of K probabilities (row-major pixels)
    HARD H W K    followed by H lines of W integer labels
    SP H W S      followed by H lines of W superpixel ids

Probabilities and model weights are written with ``repr`` so values
round-trip exactly; CSV curve files use 9 significant digits for diffability.
Parsers validate through the domain constructors, so files violating type
invariants are rejected with :class:`FileFormatError`.
"""
from __future__ import annotations

import os

import numpy as np

from .grids import (
    HardSegmentation,
    InvalidInputError,
    SoftSegmentation,
    SuperpixelMap,
)
from .hardmetrics import SWEEP_CSV_HEADER, SweepTable
from .rerank import ProposalSet, RankModel
from .trainer import TrainHistory

NUM_FMT = "%.9g"

HISTORY_CSV_HEADER = "iteration,loss,meanIOU,bgFraction"


class FileFormatError(InvalidInputError):
    """A file failed to parse or violated a format invariant."""


def _fmt(value: float) -> str:
    return NUM_FMT % value


def _open_write(path: str):
    try:
        return open(path, "w", encoding="ascii")
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            return [line.rstrip("\n") for line in fh]
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise FileFormatError(f"{path}: not an ascii text file") from exc


def _header(path: str, lines: list[str], tag: str, fields: int) -> list[int]:
    if not lines:
        raise FileFormatError(f"{path}: empty file")
    parts = lines[0].split()
    if len(parts) != fields + 1 or parts[0] != tag:
        raise FileFormatError(f"{path}: expected header '{tag}' with {fields} integers")
    try:
        return [int(p) for p in parts[1:]]
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-integer header field") from exc


def _body(path: str, lines: list[str], expected: int) -> list[str]:
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != expected:
        raise FileFormatError(f"{path}: expected {expected} data lines, found {len(body)}")
    return body


def _wrap_invalid(path: str, exc: Exception) -> FileFormatError:
    return FileFormatError(f"{path}: {exc}")


# -- soft grids -------------------------------------------------------------


def write_soft(path: str, soft: SoftSegmentation) -> None:
    with _open_write(path) as fh:
        fh.write(f"SOFT {soft.height} {soft.width} {soft.classes}\n")
        for row in soft.values:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_soft(path: str) -> SoftSegmentation:
    lines = _read_lines(path)
    h, w, k = _header(path, lines, "SOFT", 3)
    body = _body(path, lines, h * w)
    values = np.empty((h * w, k))
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != k:
            raise FileFormatError(f"{path}: line {i + 2}: expected {k} probabilities")
        try:
            values[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FileFormatError(f"{path}: line {i + 2}: non-numeric value") from exc
    try:
        return SoftSegmentation(h, w, k, values)
    except InvalidInputError as exc:
        raise _wrap_invalid(path, exc) from exc


# -- hard grids -------------------------------------------------------------


def write_hard(path: str, hard: HardSegmentation) -> None:
    grid = hard.labels.reshape(hard.height, hard.width)
    with _open_write(path) as fh:
        fh.write(f"HARD {hard.height} {hard.width} {hard.classes}\n")
        for row in grid:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")


def read_hard(path: str) -> HardSegmentation:
    lines = _read_lines(path)
    h, w, k = _header(path, lines, "HARD", 3)
    body = _body(path, lines, h)
    labels = np.empty((h, w), dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != w:
            raise FileFormatError(f"{path}: line {i + 2}: expected {w} labels")
        try:
            labels[i] = [int(p) for p in parts]
        except ValueError as exc:
            raise FileFormatError(f"{path}: line {i + 2}: non-integer label") from exc
    try:
        return HardSegmentation(h, w, k, labels.reshape(-1))
    except InvalidInputError as exc:
        raise _wrap_invalid(path, exc) from exc


# -- superpixel maps --------------------------------------------------------


def write_superpixels(path: str, sp: SuperpixelMap) -> None:
    grid = sp.ids.reshape(sp.height, sp.width)
    with _open_write(path) as fh:
        fh.write(f"SP {sp.height} {sp.width} {sp.segments}\n")
        for row in grid:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")


def read_superpixels(path: str) -> SuperpixelMap:
    lines = _read_lines(path)
    h, w, s = _header(path, lines, "SP", 3)
    body = _body(path, lines, h)
    ids = np.empty((h, w), dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != w:
            raise FileFormatError(f"{path}: line {i + 2}: expected {w} ids")
        try:
            ids[i] = [int(p) for p in parts]
        except ValueError as exc:
            raise FileFormatError(f"{path}: line {i + 2}: non-integer id") from exc
    try:
        sp = SuperpixelMap(h, w, ids.reshape(-1))
    except InvalidInputError as exc:
        raise _wrap_invalid(path, exc) from exc
    if sp.segments != s:
        raise FileFormatError(f"{path}: header claims {s} segments, map has {sp.segments}")
    return sp


# -- proposal set directories -----------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_proposal_set(directory: str, proposals: ProposalSet) -> None:
    """One directory per image: coarse members, optional full-res, manifest."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise FileFormatError(f"{directory}: {exc.strerror or exc}") from exc
    rows = []
    for m, coarse in enumerate(proposals.coarse):
        coarse_name = f"q_{m:03d}.soft"
        write_soft(os.path.join(directory, coarse_name), coarse)
        if proposals.full_res is not None:
            full_name = f"p_{m:03d}.hard"
            write_hard(os.path.join(directory, full_name), proposals.full_res[m])
            rows.append(f"{coarse_name} {full_name}")
        else:
            rows.append(coarse_name)
    with _open_write(os.path.join(directory, MANIFEST_NAME)) as fh:
        fh.write("\n".join(rows) + "\n")


def read_proposal_set(directory: str, image_id: str | None = None) -> ProposalSet:
    manifest = os.path.join(directory, MANIFEST_NAME)
    rows = [line for line in _read_lines(manifest) if line.strip()]
    if not rows:
        raise FileFormatError(f"{manifest}: empty manifest")
    coarse = []
    full: list[HardSegmentation] = []
    for row in rows:
        parts = row.split()
        if len(parts) not in (1, 2):
            raise FileFormatError(f"{manifest}: bad manifest row {row!r}")
        coarse.append(read_soft(os.path.join(directory, parts[0])))
        if len(parts) == 2:
            full.append(read_hard(os.path.join(directory, parts[1])))
    if full and len(full) != len(coarse):
        raise FileFormatError(f"{manifest}: mixed rows; full-res must be all or none")
    name = image_id if image_id is not None else os.path.basename(os.path.normpath(directory))
    try:
        return ProposalSet(name, tuple(coarse), tuple(full) if full else None)
    except InvalidInputError as exc:
        raise _wrap_invalid(directory, exc) from exc


# -- ranker models ----------------------------------------------------------


def write_rank_model(path: str, model: RankModel) -> None:
    with _open_write(path) as fh:
        fh.write(f"RANKMODEL {model.dim} {repr(model.regularization)}\n")
        for block in (model.weights, model.feature_mean, model.feature_scale):
            for v in block:
                fh.write(repr(float(v)) + "\n")
        fh.write(f"EPOCHS {model.trained_epochs}\n")


def read_rank_model(path: str) -> RankModel:
    lines = [line for line in _read_lines(path) if line.strip()]
    if not lines:
        raise FileFormatError(f"{path}: empty file")
    parts = lines[0].split()
    if len(parts) != 3 or parts[0] != "RANKMODEL":
        raise FileFormatError(f"{path}: expected header 'RANKMODEL dim lambda'")
    try:
        dim = int(parts[1])
        lam = float(parts[2])
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad header numbers") from exc
    if len(lines) != 1 + 3 * dim + 1:
        raise FileFormatError(f"{path}: expected {3 * dim} value lines plus EPOCHS trailer")
    try:
        values = np.array([float(v) for v in lines[1 : 1 + 3 * dim]])
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric value line") from exc
    trailer = lines[-1].split()
    if len(trailer) != 2 or trailer[0] != "EPOCHS":
        raise FileFormatError(f"{path}: missing EPOCHS trailer")
    try:
        epochs = int(trailer[1])
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-integer epoch count") from exc
    try:
        return RankModel(values[:dim], values[dim : 2 * dim], values[2 * dim :], lam, epochs)
    except InvalidInputError as exc:
        raise _wrap_invalid(path, exc) from exc


# -- parameter checkpoints ---------------------------------------------------


def write_params(path: str, params: np.ndarray) -> None:
    flat = np.asarray(params, dtype=np.float64).reshape(-1)
    with _open_write(path) as fh:
        fh.write(f"PARAMS {flat.size}\n")
        for v in flat:
            fh.write(repr(float(v)) + "\n")


def read_params(path: str) -> np.ndarray:
    lines = [line for line in _read_lines(path) if line.strip()]
    if not lines:
        raise FileFormatError(f"{path}: empty file")
    parts = lines[0].split()
    if len(parts) != 2 or parts[0] != "PARAMS":
        raise FileFormatError(f"{path}: expected header 'PARAMS n'")
    try:
        n = int(parts[1])
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-integer parameter count") from exc
    if len(lines) != n + 1:
        raise FileFormatError(f"{path}: expected {n} values, found {len(lines) - 1}")
    try:
        return np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric parameter line") from exc


# -- curve CSVs ---------------------------------------------------------------


def write_history_csv(path: str, history: TrainHistory) -> None:
    with _open_write(path) as fh:
        fh.write(HISTORY_CSV_HEADER + "\n")
        for it, loss, miou, bg in zip(
            history.iterations, history.loss_values, history.mean_iou, history.bg_fraction
        ):
            fh.write(f"{it},{_fmt(loss)},{_fmt(miou)},{_fmt(bg)}\n")


def read_history_csv(path: str) -> TrainHistory:
    lines = [line for line in _read_lines(path) if line.strip()]
    if not lines or lines[0] != HISTORY_CSV_HEADER:
        raise FileFormatError(f"{path}: expected header '{HISTORY_CSV_HEADER}'")
    rows = []
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 4:
            raise FileFormatError(f"{path}: line {i + 2}: expected 4 columns")
        try:
            rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise FileFormatError(f"{path}: line {i + 2}: non-numeric field") from exc
    if not rows:
        raise FileFormatError(f"{path}: no data rows")
    cols = list(zip(*rows))
    try:
        return TrainHistory(
            np.asarray(cols[0], dtype=np.int64),
            np.asarray(cols[1]),
            np.asarray(cols[2]),
            np.asarray(cols[3]),
        )
    except InvalidInputError as exc:
        raise _wrap_invalid(path, exc) from exc


def write_sweep_csv(path: str, table: SweepTable) -> None:
    with _open_write(path) as fh:
        fh.write(SWEEP_CSV_HEADER + "\n")
        for row in table.rows():
            fh.write(",".join(_fmt(v) for v in row) + "\n")
