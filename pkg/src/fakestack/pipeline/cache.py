"""On-disk prediction cache: one CSV per (model, split)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from ..core import Label, PredictionRecord
from ..errors import PredictionFileError

HEADER = ("post_id", "model_name", "p_fake", "p_real", "predicted")


def prediction_path(directory, model: str, split: str) -> Path:
    safe = model.replace(":", "-").replace("/", "-")
    return Path(directory) / f"{safe}_{split}.csv"


def cache_predictions(records: Iterable[PredictionRecord], path) -> Path:
    """Write records with probabilities at 9 decimal digits."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory does not exist: {path.parent}")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for rec in records:
            writer.writerow([rec.post_id, rec.model_name, f"{rec.probs.p_fake:.9f}", f"{rec.probs.p_real:.9f}",
                             str(rec.predicted)])
    tmp.replace(path)
    return path


def load_predictions(path) -> list[PredictionRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise PredictionFileError(f"expected header {','.join(HEADER)}, got {header!r}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(HEADER):
                raise PredictionFileError(f"expected {len(HEADER)} fields, got {len(row)}", path, lineno)
            post_id, model, p_fake, p_real, predicted = row
            try:
                rec = PredictionRecord.from_probs(post_id, model, float(p_fake), float(p_real))
                stored = Label.parse(predicted)
            except ValueError as exc:
                raise PredictionFileError(str(exc), path, lineno) from exc
            if stored != rec.predicted:
                raise PredictionFileError(f"predicted label {predicted!r} disagrees with probabilities", path, lineno)
            records.append(rec)
    return records
