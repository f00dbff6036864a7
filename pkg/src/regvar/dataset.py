"""Ingestion of raw floating-car logs into day tensors.

A day tensor holds n days x p sections x (T+1) slots of speeds with a
present/missing mask. Raw logs are aggregated into slot means, missing
cells are imputed from historical (per section, per slot) averages, and
splits always keep whole, chronologically contiguous days together.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    MissingColumn,
    NoHistory,
    ParseError,
    ShapeMismatch,
    TooFewDays,
    UnknownSection,
)

RAW_COLUMNS = ("vehicle_id", "timestamp", "section_id", "speed")


@dataclass(frozen=True)
class RawLog:
    """One probe-vehicle observation; timestamp is epoch seconds UTC."""

    vehicle_id: str
    timestamp: float
    section_id: str
    speed: float


@dataclass(frozen=True)
class SlotSpec:
    """Daily window and slot width; the window must divide evenly."""

    day_start: dt.time = dt.time(15, 0)
    day_end: dt.time = dt.time(20, 0)
    slot_minutes: int = 15

    def __post_init__(self):
        if self.slot_minutes <= 0:
            raise ValueError("slot_minutes must be positive")
        minutes = self.window_minutes
        if minutes <= 0:
            raise ValueError("day_end must be after day_start")
        if minutes % self.slot_minutes != 0:
            raise ValueError("slot_minutes must divide the day window exactly")
        if minutes // self.slot_minutes < 2:
            raise ValueError("window must contain at least 2 slots")

    @property
    def window_minutes(self) -> int:
        start = self.day_start.hour * 60 + self.day_start.minute
        end = self.day_end.hour * 60 + self.day_end.minute
        return end - start

    @property
    def slot_count(self) -> int:
        return self.window_minutes // self.slot_minutes


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test day fractions (sum to 1)."""

    train_fraction: float = 0.63
    validation_fraction: float = 0.27
    test_fraction: float = 0.10

    def __post_init__(self):
        for f in (self.train_fraction, self.validation_fraction, self.test_fraction):
            if not 0.0 < f < 1.0:
                raise ValueError("fractions must be in (0, 1)")
        total = self.train_fraction + self.validation_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")


@dataclass
class DayTensor:
    """Speeds for n days x p sections x slot_count slots, with a mask.

    Missing cells hold NaN in values and False in mask. Day identifiers
    must be strictly increasing strings (ISO dates sort correctly).
    Present cells must be finite; nonnegativity of real speeds is
    enforced at ingestion (parse_raw_logs), not by the container, so
    synthetic benchmark tensors with negative excursions remain usable.
    """

    days: list
    sections: list
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        expected = (len(self.days), len(self.sections))
        if self.values.ndim != 3 or self.values.shape[:2] != expected:
            raise ShapeMismatch(
                f"values shape {self.values.shape} does not match "
                f"{len(self.days)} days x {len(self.sections)} sections"
            )
        if self.mask.shape != self.values.shape:
            raise ShapeMismatch("mask shape differs from values shape")
        present = self.values[self.mask]
        if present.size and not np.all(np.isfinite(present)):
            raise ValueError("present values must be finite")
        if any(a >= b for a, b in zip(self.days, self.days[1:])):
            raise ValueError("day identifiers must be strictly increasing")

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    @property
    def slot_count(self) -> int:
        return self.values.shape[2]

    def subset(self, day_indices) -> "DayTensor":
        """New tensor holding the given days (indices must be sorted)."""
        idx = list(day_indices)
        return DayTensor(
            days=[self.days[i] for i in idx],
            sections=list(self.sections),
            values=self.values[idx].copy(),
            mask=self.mask[idx].copy(),
        )

    def copy(self) -> "DayTensor":
        return self.subset(range(self.n_days))


def _detect_timestamp_format(token: str) -> str:
    try:
        float(token)
        return "epoch"
    except ValueError:
        return "iso"


def _parse_timestamp(token: str, fmt: str) -> float:
    if fmt == "epoch":
        return float(token)
    parsed = dt.datetime.fromisoformat(token)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed.timestamp()


def parse_raw_logs(stream, schema=None) -> list:
    """Parse a raw-log CSV stream into RawLog records.

    The header must name the four mapped columns (default mapping is the
    identity on vehicle_id, timestamp, section_id, speed). Timestamps are
    ISO-8601 or epoch seconds, auto-detected from the first data row and
    then required to be uniform. Bad fields raise ParseError with the
    offending data-row index (1-based) and column; nothing is silently
    dropped.
    """
    mapping = dict(schema) if schema else {c: c for c in RAW_COLUMNS}
    for canonical in RAW_COLUMNS:
        if canonical not in mapping:
            raise MissingColumn(f"schema does not map column {canonical!r}")
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty raw-log file: missing header") from None
    positions = {}
    for canonical in RAW_COLUMNS:
        name = mapping[canonical]
        if name not in header:
            raise MissingColumn(f"header lacks column {name!r} (for {canonical})")
        positions[canonical] = header.index(name)

    logs = []
    ts_format = None
    for row_idx, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"row {row_idx}: expected {len(header)} fields, got {len(row)}",
                row=row_idx,
            )
        fields = {c: row[positions[c]] for c in RAW_COLUMNS}
        if ts_format is None:
            ts_format = _detect_timestamp_format(fields["timestamp"])
        try:
            timestamp = _parse_timestamp(fields["timestamp"], ts_format)
        except ValueError:
            raise ParseError(
                f"row {row_idx}: bad timestamp {fields['timestamp']!r}",
                row=row_idx,
                column="timestamp",
            ) from None
        try:
            speed = float(fields["speed"])
        except ValueError:
            raise ParseError(
                f"row {row_idx}: bad speed {fields['speed']!r}",
                row=row_idx,
                column="speed",
            ) from None
        if not math.isfinite(speed) or speed < 0:
            raise ParseError(
                f"row {row_idx}: speed must be finite and >= 0, got {speed}",
                row=row_idx,
                column="speed",
            )
        logs.append(
            RawLog(
                vehicle_id=fields["vehicle_id"],
                timestamp=timestamp,
                section_id=fields["section_id"],
                speed=speed,
            )
        )
    return logs


def aggregate(logs, spec: SlotSpec, sections) -> DayTensor:
    """Average log speeds into (day, section, slot) cells.

    A cell is the arithmetic mean of the speeds landing in its half-open
    slot interval [start, start + slot_minutes); a timestamp exactly on a
    boundary belongs to the later slot. Cells without logs are missing.
    Logs outside [day_start, day_end) are ignored (the window is assumed
    to cover the study period). The reduction is order-independent: cell
    means are computed with an exact sum over value-sorted contributions,
    so any log ordering or parallel split gives identical output.
    """
    sections = list(sections)
    section_pos = {s: i for i, s in enumerate(sections)}
    start_minutes = spec.day_start.hour * 60 + spec.day_start.minute
    cells = {}
    for log in logs:
        if log.section_id not in section_pos:
            raise UnknownSection(f"unknown section_id {log.section_id!r}")
        stamp = dt.datetime.fromtimestamp(log.timestamp, tz=dt.timezone.utc)
        offset = stamp.hour * 60 + stamp.minute + stamp.second / 60.0 - start_minutes
        if offset < 0 or offset >= spec.window_minutes:
            continue
        slot = int(offset // spec.slot_minutes)
        key = (stamp.date().isoformat(), section_pos[log.section_id], slot)
        cells.setdefault(key, []).append(log.speed)

    days = sorted({key[0] for key in cells})
    values = np.full((len(days), len(sections), spec.slot_count), np.nan)
    mask = np.zeros_like(values, dtype=bool)
    day_pos = {d: i for i, d in enumerate(days)}
    for (day, sec, slot), speeds in cells.items():
        values[day_pos[day], sec, slot] = math.fsum(sorted(speeds)) / len(speeds)
        mask[day_pos[day], sec, slot] = True
    return DayTensor(days=days, sections=sections, values=values, mask=mask)


def impute_historical(tensor: DayTensor, reference: DayTensor | None = None) -> DayTensor:
    """Fill missing cells with the reference per-(section, slot) mean.

    The reference defaults to the tensor itself (training data); pass the
    training tensor when imputing validation/test data so no information
    leaks. Averages use present reference cells only. Raises NoHistory if
    a needed (section, slot) has no present reference cell.
    """
    if reference is None:
        reference = tensor
    if (
        reference.sections != tensor.sections
        or reference.slot_count != tensor.slot_count
    ):
        raise ShapeMismatch("reference sections/slots differ from the tensor")
    counts = reference.mask.sum(axis=0)
    sums = np.where(reference.mask, reference.values, 0.0).sum(axis=0)
    needed = ~tensor.mask
    missing_history = needed.any(axis=0) & (counts == 0)
    if missing_history.any():
        k, t = np.argwhere(missing_history)[0]
        raise NoHistory(
            f"no present reference value for section "
            f"{tensor.sections[k]!r}, slot {t}"
        )
    with np.errstate(invalid="ignore"):
        history = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    values = np.where(tensor.mask, tensor.values, history[None, :, :])
    return DayTensor(
        days=list(tensor.days),
        sections=list(tensor.sections),
        values=values,
        mask=np.ones_like(tensor.mask),
    )


def split_days(tensor: DayTensor, spec: SplitSpec = SplitSpec()) -> tuple:
    """Partition into contiguous train/validation/test runs of whole days.

    Subset sizes are round(fraction * n) (half away from zero) with the
    remainder assigned to train; each subset must keep at least one day.
    """
    n = tensor.n_days
    if n < 3:
        raise TooFewDays(f"need at least 3 days to split, got {n}")
    n_train = math.floor(spec.train_fraction * n + 0.5)
    n_val = math.floor(spec.validation_fraction * n + 0.5)
    n_test = math.floor(spec.test_fraction * n + 0.5)
    n_train += n - (n_train + n_val + n_test)
    if min(n_train, n_val, n_test) < 1:
        raise TooFewDays(
            f"split sizes {n_train}/{n_val}/{n_test} leave an empty subset"
        )
    train = tensor.subset(range(0, n_train))
    val = tensor.subset(range(n_train, n_train + n_val))
    test = tensor.subset(range(n_train + n_val, n))
    return train, val, test


def save_days(tensor: DayTensor, path) -> None:
    """Write the day-tensor CSV: day,slot,<sections...>; missing = empty.

    Rows are sorted by (day, slot); floats use repr so a round trip is
    exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "slot", *tensor.sections])
        for i, day in enumerate(tensor.days):
            for t in range(tensor.slot_count):
                row = [day, t]
                for k in range(tensor.n_sections):
                    row.append(
                        repr(float(tensor.values[i, k, t]))
                        if tensor.mask[i, k, t]
                        else ""
                    )
                writer.writerow(row)


def load_days(path) -> DayTensor:
    """Read a day-tensor CSV written by save_days."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "day" or header[1] != "slot":
            raise ParseError(f"{path}: header must start with day,slot")
        sections = header[2:]
        rows = []
        for row_idx, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ShapeMismatch(
                    f"{path}: row {row_idx} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            rows.append((row_idx, row))
    if not rows:
        raise ParseError(f"{path}: no data rows")

    days = []
    for _, row in rows:
        if not days or row[0] != days[-1]:
            days.append(row[0])
    slot_count, seen = 0, set()
    for row_idx, row in rows:
        try:
            slot_count = max(slot_count, int(row[1]) + 1)
        except ValueError:
            raise ParseError(
                f"{path}: row {row_idx}: bad slot {row[1]!r}", row=row_idx
            ) from None
    values = np.full((len(days), len(sections), slot_count), np.nan)
    mask = np.zeros_like(values, dtype=bool)
    day_pos = {d: i for i, d in enumerate(days)}
    prev_key = None
    for row_idx, row in rows:
        day, slot_str = row[0], row[1]
        try:
            slot = int(slot_str)
        except ValueError:
            raise ParseError(
                f"{path}: row {row_idx}: bad slot {slot_str!r}", row=row_idx
            ) from None
        key = (day, slot)
        if prev_key is not None and key <= prev_key:
            raise ParseError(f"{path}: rows not sorted by (day, slot)", row=row_idx)
        prev_key = key
        if key in seen:
            raise ShapeMismatch(f"{path}: duplicate (day, slot) row {key}")
        seen.add(key)
        for k, token in enumerate(row[2:]):
            if token == "":
                continue
            try:
                values[day_pos[day], k, slot] = float(token)
            except ValueError:
                raise ParseError(
                    f"{path}: row {row_idx}: bad value {token!r}",
                    row=row_idx,
                    column=sections[k],
                ) from None
            mask[day_pos[day], k, slot] = True
    if len(seen) != len(days) * slot_count:
        raise ShapeMismatch(f"{path}: not every (day, slot) pair has a row")
    return DayTensor(days=days, sections=sections, values=values, mask=mask)
