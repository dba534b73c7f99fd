"""Panel data model: a dense (time x entity x variable) block of floats.

Missing observations are stored as NaN. Nothing else in a frame is allowed to
be non-finite, so NaN always means "absent" and never a numeric payload.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateTimestamp, EmptySlice, ParseError, RaggedPanel

MISSING = float("nan")
MISSING_TOKENS = frozenset({"", "NA"})
# entity id used for files without an `entity.` column prefix
SINGLE_ENTITY = "_"


def is_missing(values):
    return np.isnan(values)


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError:
        raise ParseError(f"not an ISO-8601 date: {value!r}") from None


@dataclass(frozen=True, eq=False)
class PanelFrame:
    """Immutable aligned panel.

    ``values[t, e, v]`` holds variable ``variables[v]`` of entity ``entities[e]``
    at ``timestamps[t]``.
    """

    timestamps: tuple
    entities: tuple
    variables: tuple
    values: np.ndarray
    _columns: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ts = tuple(_as_date(t) for t in self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "entities", tuple(str(e) for e in self.entities))
        object.__setattr__(self, "variables", tuple(str(v) for v in self.variables))
        values = np.array(self.values, dtype=np.float64, copy=True)
        shape = (len(ts), len(self.entities), len(self.variables))
        if values.shape != shape:
            raise RaggedPanel(f"values shape {values.shape} does not match axes {shape}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            seen = set()
            for t in ts:
                if t in seen:
                    raise DuplicateTimestamp(f"timestamp {t.isoformat()} appears twice")
                seen.add(t)
            raise ValueError("timestamps must be strictly increasing")
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("duplicate entity identifiers")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("duplicate variable names")
        if np.isinf(values).any():
            raise ValueError("panel values must be finite or missing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_times(self):
        return len(self.timestamps)

    @property
    def n_entities(self):
        return len(self.entities)

    def column(self, variable: str) -> np.ndarray:
        """Contiguous read-only (time x entity) block for one variable."""
        block = self._columns.get(variable)
        if block is None:
            try:
                v = self.variables.index(variable)
            except ValueError:
                raise KeyError(variable) from None
            block = np.ascontiguousarray(self.values[:, :, v])
            block.setflags(write=False)
            self._columns[variable] = block
        return block

    def missing_count(self) -> int:
        return int(np.isnan(self.values).sum())

    def __eq__(self, other):
        if not isinstance(other, PanelFrame):
            return NotImplemented
        return (
            self.timestamps == other.timestamps
            and self.entities == other.entities
            and self.variables == other.variables
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None

    def with_variables(self, columns: dict) -> "PanelFrame":
        """Return a new frame with extra (or replaced) (time x entity) variables."""
        names = list(self.variables)
        blocks = [self.values[:, :, i] for i in range(len(names))]
        for name, block in columns.items():
            block = np.asarray(block, dtype=np.float64)
            if block.shape != (self.n_times, self.n_entities):
                raise RaggedPanel(f"variable {name!r} has shape {block.shape}")
            block = np.where(np.isfinite(block), block, np.nan)
            if name in names:
                blocks[names.index(name)] = block
            else:
                names.append(name)
                blocks.append(block)
        return PanelFrame(self.timestamps, self.entities, names, np.stack(blocks, axis=2))

    def select_entities(self, order: Sequence[str]) -> "PanelFrame":
        idx = [self.entities.index(e) for e in order]
        return PanelFrame(self.timestamps, [self.entities[i] for i in idx], self.variables,
                          self.values[:, idx, :])


def slice_time(frame: PanelFrame, start, end) -> PanelFrame:
    """Sub-panel with ``start <= timestamp <= end`` (both inclusive)."""
    start, end = _as_date(start), _as_date(end)
    if start > end:
        raise ValueError(f"start {start} is after end {end}")
    rows = [i for i, t in enumerate(frame.timestamps) if start <= t <= end]
    if not rows:
        raise EmptySlice(f"no timestamps in [{start}, {end}]")
    lo, hi = rows[0], rows[-1] + 1
    return PanelFrame(frame.timestamps[lo:hi], frame.entities, frame.variables,
                      frame.values[lo:hi])


def _parse_value(text: str, where: str) -> float:
    text = text.strip()
    if text in MISSING_TOKENS:
        return MISSING
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r} at {where}") from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {text!r} at {where}")
    return value


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: missing header row")
    return [h.strip() for h in rows[0]], rows[1:]


def _load_wide(path) -> PanelFrame:
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise ParseError(f"{path}: wide layout needs a timestamp column and at least one value column")
    cols = header[1:]
    if len(set(cols)) != len(cols):
        raise ParseError(f"{path}: duplicate column names")
    prefixed = ["." in c for c in cols]
    if any(prefixed) and not all(prefixed):
        raise ParseError(f"{path}: mix of `entity.variable` and bare variable columns")
    if all(prefixed):
        pairs = [tuple(c.split(".", 1)) for c in cols]
    else:
        pairs = [(SINGLE_ENTITY, c) for c in cols]
    entities = list(dict.fromkeys(e for e, _ in pairs))
    variables = list(dict.fromkeys(v for _, v in pairs))
    present = set(pairs)
    for e in entities:
        for v in variables:
            if (e, v) not in present:
                raise RaggedPanel(f"variable {v!r} absent for entity {e!r}")

    by_date = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        t = _as_date(row[0])
        if t in by_date:
            raise DuplicateTimestamp(f"timestamp {t.isoformat()} appears twice")
        by_date[t] = row[1:]
    timestamps = sorted(by_date)
    values = np.empty((len(timestamps), len(entities), len(variables)))
    e_idx = {e: i for i, e in enumerate(entities)}
    v_idx = {v: i for i, v in enumerate(variables)}
    for ti, t in enumerate(timestamps):
        for (e, v), text in zip(pairs, by_date[t]):
            values[ti, e_idx[e], v_idx[v]] = _parse_value(text, f"{t.isoformat()}/{e}.{v}")
    return PanelFrame(timestamps, entities, variables, values)


def _load_long(path) -> PanelFrame:
    header, rows = _read_rows(path)
    expected = ["timestamp", "entity", "variable", "value"]
    if [h.lower() for h in header] != expected:
        raise ParseError(f"{path}: long layout needs columns {','.join(expected)}")
    cells = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        t = _as_date(row[0])
        key = (t, row[1].strip(), row[2].strip())
        if key in cells:
            raise DuplicateTimestamp(
                f"timestamp {t.isoformat()} appears twice for {key[1]}.{key[2]}")
        cells[key] = _parse_value(row[3], f"{path}:{lineno}")
    timestamps = sorted({k[0] for k in cells})
    entities = list(dict.fromkeys(k[1] for k in cells))
    variables = list(dict.fromkeys(k[2] for k in cells))
    values = np.empty((len(timestamps), len(entities), len(variables)))
    for ti, t in enumerate(timestamps):
        for ei, e in enumerate(entities):
            for vi, v in enumerate(variables):
                try:
                    values[ti, ei, vi] = cells[(t, e, v)]
                except KeyError:
                    raise RaggedPanel(
                        f"no cell for {e}.{v} at {t.isoformat()} (use NA for missing)") from None
    return PanelFrame(timestamps, entities, variables, values)


def load_csv(path, layout: str = "wide") -> PanelFrame:
    if layout == "wide":
        return _load_wide(path)
    if layout == "long":
        return _load_long(path)
    raise ValueError(f"unknown layout {layout!r}")


def _fmt(value: float) -> str:
    return "NA" if np.isnan(value) else repr(float(value))


def write_csv(frame: PanelFrame, path, layout: str = "wide") -> None:
    """Serialize so that :func:`load_csv` reproduces the frame bit-exactly."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if layout == "long":
            w.writerow(["timestamp", "entity", "variable", "value"])
            for ti, t in enumerate(frame.timestamps):
                for ei, e in enumerate(frame.entities):
                    for vi, v in enumerate(frame.variables):
                        w.writerow([t.isoformat(), e, v, _fmt(frame.values[ti, ei, vi])])
            return
        if layout != "wide":
            raise ValueError(f"unknown layout {layout!r}")
        single = frame.entities == (SINGLE_ENTITY,)
        cols = [(ei, vi) for ei in range(frame.n_entities) for vi in range(len(frame.variables))]
        names = [frame.variables[vi] if single else f"{frame.entities[ei]}.{frame.variables[vi]}"
                 for ei, vi in cols]
        w.writerow(["date", *names])
        for ti, t in enumerate(frame.timestamps):
            w.writerow([t.isoformat(), *(_fmt(frame.values[ti, ei, vi]) for ei, vi in cols)])


def write_matrix_csv(timestamps: Iterable, entities: Sequence[str], name: str,
                     matrix: np.ndarray, path) -> None:
    """Write one (time x entity) matrix in the wide layout as variable ``name``."""
    single = tuple(entities) == (SINGLE_ENTITY,)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *(name if single else f"{e}.{name}" for e in entities)])
        for t, row in zip(timestamps, matrix):
            w.writerow([_as_date(t).isoformat(), *(_fmt(v) for v in row)])
