"""Small file helpers: atomic writes and the toolkit CSV dialect."""

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.9g}"


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file + rename.

    A failure part way leaves any previous file untouched and no partial
    output behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write(path, render_csv(header, rows))


def read_csv(path):
    """Return (header, list of row lists) with all cells as strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return [], []
        rows = [r for r in reader if r]
    return header, rows
