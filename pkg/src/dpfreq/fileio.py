"""Text formats for matrices, sanitized matrices and evaluation results."""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable

import numpy as np

from .matrix import FrequencyMatrix, from_points
from .query import Evaluation
from .sanitized import SanitizedMatrix


class FormatError(ValueError):
    pass


def _lines_with_offsets(text: str):
    """Yield (lineno, byte offset, line) and flag a final line lacking its newline."""
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), 1):
        complete = line.endswith("\n")
        yield lineno, offset, line.rstrip("\r\n"), complete
        offset += len(line.encode())


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def format_matrix(m: FrequencyMatrix) -> str:
    out = io.StringIO()
    out.write("#extents=" + ",".join(map(str, m.extents)) + "\n")
    out.write(f"#cells={m.nnz}\n")
    rows = np.column_stack([m.coords, m.counts]) if m.nnz else np.zeros((0, m.d + 1), dtype=np.int64)
    np.savetxt(out, rows, fmt="%d", delimiter=",")
    return out.getvalue()


def write_matrix(m: FrequencyMatrix, path) -> None:
    _atomic_write(path, format_matrix(m))


def parse_matrix(text: str, source: str = "<matrix>") -> FrequencyMatrix:
    extents = None
    expected = None
    rows: list[list[int]] = []
    for lineno, offset, line, complete in _lines_with_offsets(text):
        if not complete:
            raise FormatError(f"{source}: truncated at byte offset {offset} (line {lineno})")
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key == "extents":
                try:
                    extents = tuple(int(v) for v in value.split(","))
                except ValueError:
                    raise FormatError(f"{source}: line {lineno}: bad extents {value!r}") from None
            elif key == "cells":
                expected = int(value)
            continue
        if extents is None:
            raise FormatError(f"{source}: line {lineno}: record before #extents header")
        try:
            vals = [int(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"{source}: line {lineno}: non-integer field in {line!r}") from None
        if len(vals) != len(extents) + 1:
            raise FormatError(f"{source}: line {lineno}: expected {len(extents) + 1} fields")
        if vals[-1] <= 0:
            raise FormatError(f"{source}: line {lineno}: counts must be positive")
        rows.append(vals)
    if extents is None:
        raise FormatError(f"{source}: missing #extents header")
    if expected is not None and expected != len(rows):
        raise FormatError(
            f"{source}: truncated at byte offset {len(text.encode())}: "
            f"{len(rows)} of {expected} cells present"
        )
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, len(extents) + 1)
    try:
        return from_points(arr[:, :-1], extents, arr[:, -1])
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def read_matrix(path) -> FrequencyMatrix:
    return parse_matrix(_read_text(path), str(path))


# sanitized matrices: key=value header, a "#partitions=P" marker, then P records

_VOLATILE_KEYS = ("timestamp", "runtime_s")


def format_sanitized(sm: SanitizedMatrix) -> str:
    out = io.StringIO()
    meta = dict(sm.metadata)
    for key in ("method", "epsilon", "seed"):
        out.write(f"{key}={meta.pop(key, '')}\n")
    out.write("extents=" + ",".join(map(str, sm.extents)) + "\n")
    for key in sorted(meta):
        out.write(f"{key}={_fmt_value(meta[key])}\n")
    out.write(f"#partitions={len(sm)}\n")
    for lo, hi, n in zip(sm.lo.tolist(), sm.hi.tolist(), sm.noisy.tolist()):
        out.write(",".join(f"{a},{b}" for a, b in zip(lo, hi)) + f",{n!r}\n")
    return out.getvalue()


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def strip_volatile(text: str) -> str:
    """Drop timestamp/runtime lines so two runs can be compared byte for byte."""
    return "".join(
        ln for ln in text.splitlines(keepends=True)
        if ln.split("=", 1)[0] not in _VOLATILE_KEYS
    )


def write_sanitized(sm: SanitizedMatrix, path) -> None:
    _atomic_write(path, format_sanitized(sm))


def parse_sanitized(text: str, source: str = "<sanitized>") -> SanitizedMatrix:
    meta: dict = {}
    extents = None
    expected = None
    lo, hi, noisy = [], [], []
    for lineno, offset, line, complete in _lines_with_offsets(text):
        if not complete:
            raise FormatError(f"{source}: truncated at byte offset {offset} (line {lineno})")
        if not line.strip():
            continue
        if expected is None:
            if line.startswith("#partitions="):
                expected = int(line.split("=", 1)[1])
                if extents is None:
                    raise FormatError(f"{source}: line {lineno}: missing extents header")
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{source}: line {lineno}: expected key=value, got {line!r}")
            if key == "extents":
                extents = tuple(int(v) for v in value.split(","))
            else:
                meta[key] = _parse_value(value)
            continue
        fields = line.split(",")
        d = len(extents)
        if len(fields) != 2 * d + 1:
            raise FormatError(f"{source}: line {lineno}: expected {2 * d + 1} fields")
        try:
            bounds = [int(v) for v in fields[:-1]]
            value = float(fields[-1])
        except ValueError:
            raise FormatError(f"{source}: line {lineno}: malformed record {line!r}") from None
        lo.append(bounds[0::2])
        hi.append(bounds[1::2])
        noisy.append(value)
    if expected is None:
        raise FormatError(f"{source}: missing #partitions marker")
    if len(noisy) != expected:
        raise FormatError(
            f"{source}: truncated at byte offset {len(text.encode())}: "
            f"{len(noisy)} of {expected} partitions present"
        )
    for key in ("method", "epsilon", "seed"):
        if key not in meta:
            raise FormatError(f"{source}: missing {key} header")
    return SanitizedMatrix(extents, lo, hi, noisy, meta)


def read_sanitized(path) -> SanitizedMatrix:
    return parse_sanitized(_read_text(path), str(path))


# evaluation results

QUERY_FIELDS = ["query_id", "true", "noisy", "mre"]
SUMMARY_FIELDS = ["method", "eps", "d", "dataset", "mean_mre", "median_mre", "seed"]


def format_query_csv(ev: Evaluation) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(QUERY_FIELDS)
    for k, (t, n, e) in enumerate(zip(ev.true.tolist(), ev.noisy.tolist(), ev.errors.tolist())):
        w.writerow([k, t, repr(n), repr(e)])
    return out.getvalue()


def format_summary_csv(rows: Iterable[dict], fields=SUMMARY_FIELDS) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt_value(v) for k, v in row.items()})
    return out.getvalue()


def parse_query_csv(text: str) -> Evaluation:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != QUERY_FIELDS:
        raise FormatError(f"query CSV header {reader.fieldnames} != {QUERY_FIELDS}")
    rows = list(reader)
    true = np.array([int(r["true"]) for r in rows], dtype=np.int64)
    noisy = np.array([float(r["noisy"]) for r in rows])
    errors = np.array([float(r["mre"]) for r in rows])
    return Evaluation(true, noisy, errors, float("nan"))


def parse_summary_csv(text: str) -> list[dict]:
    return [{k: _parse_value(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
