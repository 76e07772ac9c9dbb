"""Declarative preprocessing recipes for raw UCI anomaly-detection files.

A recipe is a ``key = value`` text file (``#`` starts a comment)::

    name = wdbc
    files = wdbc.data
    delimiter = ,
    drop_columns = 0
    label_column = 1
    outlier_values = B

Keys:
    files           comma-separated file names, resolved against the data dir
    join            ``rows`` (stack files) or ``columns`` (place side by side)
    delimiter       a character, ``tab`` or ``whitespace``
    header          ``true`` if every file starts with a header row
    missing         token read as 0 (non-finite numbers such as ``NaN`` are
                    treated the same way)
    drop_incomplete ``true`` drops rows holding a missing token instead
    drop_columns    indices or header names removed before parsing
    label_column    index, header name, or ``row_block:N`` (label = row // N)
    outlier_values  ``|``-separated label values marking outliers
    inlier_values   ``|``-separated label values marking inliers; with both
                    lists given, rows matching neither are dropped
    outlier_rule    ``least_frequent`` picks the rarest label value
    flip            ``true`` swaps inliers and outliers

Column indices are 0-based and refer to the joined table.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from dumkit.data import DataError, EmbeddingBatch

_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


@dataclass
class Recipe:
    name: str
    files: list[str]
    label_column: str
    join: str = "rows"
    delimiter: str = ","
    header: bool = False
    missing: str | None = None
    drop_incomplete: bool = False
    drop_columns: list[str] = field(default_factory=list)
    outlier_values: list[str] = field(default_factory=list)
    inlier_values: list[str] = field(default_factory=list)
    outlier_rule: str | None = None
    flip: bool = False


def parse_recipe(text: str) -> Recipe:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"recipe line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    for req in ("name", "files", "label_column"):
        if req not in kv:
            raise DataError(f"recipe is missing required key {req!r}")

    def lst(key, sep):
        return [s.strip() for s in kv[key].split(sep) if s.strip()] if key in kv else []

    def flag(key):
        v = kv.get(key, "false").lower()
        if v not in _BOOL:
            raise DataError(f"recipe key {key!r}: expected true/false, got {v!r}")
        return _BOOL[v]

    r = Recipe(
        name=kv["name"],
        files=lst("files", ","),
        label_column=kv["label_column"],
        join=kv.get("join", "rows"),
        delimiter=kv.get("delimiter", ","),
        header=flag("header"),
        missing=kv.get("missing"),
        drop_incomplete=flag("drop_incomplete"),
        drop_columns=lst("drop_columns", ","),
        outlier_values=lst("outlier_values", "|"),
        inlier_values=lst("inlier_values", "|"),
        outlier_rule=kv.get("outlier_rule"),
        flip=flag("flip"),
    )
    if r.join not in ("rows", "columns"):
        raise DataError(f"recipe join must be 'rows' or 'columns', got {r.join!r}")
    if r.outlier_rule not in (None, "least_frequent"):
        raise DataError(f"unknown outlier_rule {r.outlier_rule!r}")
    if not (r.outlier_values or r.inlier_values or r.outlier_rule):
        raise DataError("recipe needs outlier_values, inlier_values or outlier_rule")
    return r


def load_recipe(path_or_name) -> Recipe:
    """Parse a recipe file, or one of the shipped recipes by dataset name."""
    p = Path(path_or_name)
    if p.exists():
        return parse_recipe(p.read_text())
    shipped = resources.files("dumkit") / "recipes" / f"{path_or_name}.recipe"
    if shipped.is_file():
        return parse_recipe(shipped.read_text())
    raise DataError(f"no recipe file or shipped recipe named {path_or_name!r}")


def shipped_recipes() -> list[str]:
    folder = resources.files("dumkit") / "recipes"
    return sorted(f.name[: -len(".recipe")] for f in folder.iterdir() if f.name.endswith(".recipe"))


def _read_rows(path: Path, recipe: Recipe) -> tuple[list[str] | None, list[list[str]]]:
    if not path.exists():
        raise DataError(f"{path}: no such file (download it from the UCI repository)")
    with open(path, newline="", errors="replace") as fh:
        if recipe.delimiter == "whitespace":
            rows = [line.split() for line in fh]
        else:
            delim = "\t" if recipe.delimiter == "tab" else recipe.delimiter
            rows = [[c.strip() for c in r] for r in csv.reader(fh, delimiter=delim)]
    rows = [r for r in rows if any(r)]
    if recipe.header:
        return rows[0], rows[1:]
    return None, rows


def _column_index(spec: str, names: list[str] | None, width: int) -> int:
    if names is not None and spec in names:
        return names.index(spec)
    try:
        i = int(spec)
    except ValueError:
        raise DataError(f"unknown column {spec!r}") from None
    if not 0 <= i < width:
        raise DataError(f"column index {i} out of range for {width} columns")
    return i


def _same(a: str, b: str) -> bool:
    if a == b:
        return True
    try:
        return float(a) == float(b)
    except ValueError:
        return False


def _cell(s: str, missing: str | None) -> float:
    if missing is not None and s == missing:
        return 0.0
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"non-numeric feature value {s!r}") from None
    return v if math.isfinite(v) else 0.0


def build_dataset(recipe: Recipe, data_dir=".") -> EmbeddingBatch:
    """Apply ``recipe`` to the raw files under ``data_dir`` (no scaling)."""
    data_dir = Path(data_dir)
    parts = [_read_rows(data_dir / f, recipe) for f in recipe.files]
    if recipe.join == "rows":
        names = parts[0][0]
        rows = [r for _, body in parts for r in body]
    else:
        lengths = {len(body) for _, body in parts}
        if len(lengths) != 1:
            raise DataError(f"column-joined files have differing row counts {sorted(lengths)}")
        rows = [sum(cols, []) for cols in zip(*(body for _, body in parts))]
        names = sum((h for h, _ in parts), []) if recipe.header else None
    if not rows:
        raise DataError(f"recipe {recipe.name}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"recipe {recipe.name}: row {i} has {len(r)} fields, expected {width}")
    if recipe.drop_incomplete and recipe.missing is not None:
        rows = [r for r in rows if recipe.missing not in r]

    if recipe.label_column.startswith("row_block:"):
        block = int(recipe.label_column.split(":", 1)[1])
        raw_labels = [str(i // block) for i in range(len(rows))]
        label_idx = None
    else:
        label_idx = _column_index(recipe.label_column, names, width)
        raw_labels = [r[label_idx] for r in rows]
    dropped = {_column_index(c, names, width) for c in recipe.drop_columns}
    keep = [i for i in range(width) if i != label_idx and i not in dropped]

    if recipe.outlier_rule == "least_frequent":
        counts = Counter(raw_labels)
        rare = min(counts, key=lambda v: (counts[v], v))
        is_out = [v == rare for v in raw_labels]
        selected = list(range(len(rows)))
    else:
        is_out, selected = [], []
        for i, v in enumerate(raw_labels):
            out = any(_same(v, o) for o in recipe.outlier_values)
            inl = any(_same(v, o) for o in recipe.inlier_values)
            if recipe.outlier_values and recipe.inlier_values:
                if not (out or inl):
                    continue
            elif recipe.inlier_values:
                out = not inl
            selected.append(i)
            is_out.append(out)
    if recipe.flip:
        is_out = [not o for o in is_out]

    x = np.array([[_cell(rows[i][c], recipe.missing) for c in keep] for i in selected], dtype=float)
    labels = np.array(is_out, dtype=np.int64)
    cols = [names[c] for c in keep] if names is not None else [f"x{c}" for c in keep]
    return EmbeddingBatch(x, labels, cols)
