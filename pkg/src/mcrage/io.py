"""Atomic file output, CSV writers and seed derivation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import Dataset, ScalerParams, destandardize

SYNTHETIC_COLUMN = "__synthetic"


def derive_seed(master: int, stage: str) -> int:
    """Sub-seed for a named stage: first 8 bytes (little-endian) of sha256("<master>:<stage>"), top bit cleared."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=True) + "\n")


def fmt(x) -> str:
    """Shortest round-tripping decimal repr; always '.' as the decimal point."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_dataset(path, ds: Dataset, scaler: ScalerParams | None = None, with_flag: bool | None = None) -> None:
    """Write rows with category codes mapped back to their original values.

    With ``scaler`` the features are destandardized first. The provenance column is
    written when the dataset carries a flag (or ``with_flag`` forces it).
    """
    if scaler is not None:
        ds = destandardize(ds, scaler)
    sc = ds.schema
    flag = ds.synthetic is not None if with_flag is None else with_flag
    header = [*sc.continuous_names, *sc.attribute_names, sc.label_name]
    if flag:
        header.append(SYNTHETIC_COLUMN)
    syn = ds.synthetic_flags()

    def rows():
        for i in range(ds.n):
            row = [*ds.features[i].tolist()]
            row += [sc.attribute_levels[j][c] for j, c in enumerate(ds.attributes[i])]
            row.append(sc.label_levels[ds.labels[i]])
            if flag:
                row.append(int(syn[i]))
            yield row

    write_rows(path, header, rows())
