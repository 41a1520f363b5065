"""Observed-sample container and CSV ingestion.

One observation per subject: follow-up time ``y = min(T, C)``, event
indicator ``delta = I(T <= C)``, censored treatment time ``ztilde =
min(Z, Y)``, treatment-observed indicator ``dtilde = I(Z <= Y)``, and the
instrument value ``w``.  The container is immutable after construction and
keeps a permutation sorting observations by ``w`` (ties broken by original
row index) for the downstream empirical operators.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Observation",
    "Dataset",
    "validate",
    "load_csv",
    "save_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("y", "delta", "ztilde", "dtilde", "w")


def fmt_float(x: float) -> str:
    """Serialize a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Observation:
    y: float
    delta: int
    ztilde: float
    dtilde: int
    w: float


class Dataset:
    """Immutable collection of observations stored as parallel arrays."""

    __slots__ = ("y", "delta", "ztilde", "dtilde", "w", "sorted_w_index", "n")

    def __init__(self, y, delta, ztilde, dtilde, w, *, _skip_validation=False):
        y = np.ascontiguousarray(y, dtype=float)
        delta = np.ascontiguousarray(delta, dtype=np.int8)
        ztilde = np.ascontiguousarray(ztilde, dtype=float)
        dtilde = np.ascontiguousarray(dtilde, dtype=np.int8)
        w = np.ascontiguousarray(w, dtype=float)
        n = y.shape[0]
        if n == 0:
            raise ValueError("empty dataset")
        for name, arr in (("delta", delta), ("ztilde", ztilde),
                          ("dtilde", dtilde), ("w", w)):
            if arr.shape != (n,):
                raise ValueError(f"column {name} has length {arr.shape}, expected {n}")
        for arr in (y, delta, ztilde, dtilde, w):
            arr.setflags(write=False)
        self.y = y
        self.delta = delta
        self.ztilde = ztilde
        self.dtilde = dtilde
        self.w = w
        self.n = n
        # stable ordering by w; lexsort's last key is primary
        idx = np.lexsort((np.arange(n), w))
        idx.setflags(write=False)
        self.sorted_w_index = idx
        if not _skip_validation and not _fast_valid(self):
            problems = validate(self)
            row, msg = problems[0]
            more = f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""
            raise ValueError(f"invalid dataset at row {row}: {msg}{more}")

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Observation:
        return Observation(float(self.y[i]), int(self.delta[i]),
                           float(self.ztilde[i]), int(self.dtilde[i]),
                           float(self.w[i]))

    def observations(self):
        return [self[i] for i in range(self.n)]

    @classmethod
    def from_observations(cls, observations) -> "Dataset":
        obs = list(observations)
        return cls(
            [o.y for o in obs],
            [o.delta for o in obs],
            [o.ztilde for o in obs],
            [o.dtilde for o in obs],
            [o.w for o in obs],
        )

    def take(self, indices) -> "Dataset":
        """Row subset / resample (used by the bootstrap)."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.y[idx], self.delta[idx], self.ztilde[idx],
                       self.dtilde[idx], self.w[idx], _skip_validation=True)


def _fast_valid(dataset: Dataset) -> bool:
    """Vectorized all-rows invariant check (error details come from validate)."""
    y, zt = dataset.y, dataset.ztilde
    return bool(
        np.all(np.isfinite(y)) and np.all(y >= 0)
        and np.all(np.isfinite(zt)) and np.all(zt >= 0) and np.all(zt <= y)
        and np.all((dataset.delta == 0) | (dataset.delta == 1))
        and np.all((dataset.dtilde == 0) | (dataset.dtilde == 1))
        and np.all((dataset.dtilde == 1) | (zt == y))
        and np.all(np.isfinite(dataset.w))
    )


def validate(dataset: Dataset) -> list[tuple[int, str]]:
    """Return all invariant violations as (row, message) pairs."""
    problems: list[tuple[int, str]] = []
    y, delta = dataset.y, dataset.delta
    zt, dt = dataset.ztilde, dataset.dtilde
    for i in range(dataset.n):
        if not np.isfinite(y[i]) or y[i] < 0:
            problems.append((i, f"y must be finite and nonnegative, got {y[i]}"))
        if delta[i] not in (0, 1):
            problems.append((i, f"delta must be 0 or 1, got {delta[i]}"))
        if not np.isfinite(zt[i]) or zt[i] < 0:
            problems.append((i, f"ztilde must be finite and nonnegative, got {zt[i]}"))
        elif zt[i] > y[i]:
            problems.append((i, f"ztilde ({zt[i]}) exceeds y ({y[i]})"))
        if dt[i] not in (0, 1):
            problems.append((i, f"dtilde must be 0 or 1, got {dt[i]}"))
        elif dt[i] == 0 and zt[i] != y[i]:
            problems.append((i, f"dtilde=0 requires ztilde=y, got ztilde={zt[i]}, y={y[i]}"))
        if not np.isfinite(dataset.w[i]):
            problems.append((i, f"w must be finite, got {dataset.w[i]}"))
    return problems


def _parse_rows(reader, source: str) -> Dataset:
    header = next(reader, None)
    if header is None:
        raise ValueError(f"{source}: empty file, expected header {','.join(CSV_COLUMNS)}")
    header = tuple(h.strip() for h in header)
    if header != CSV_COLUMNS:
        raise ValueError(
            f"{source}: bad header {','.join(header)!r}, expected {','.join(CSV_COLUMNS)!r}"
        )
    cols: list[list[float]] = [[], [], [], [], []]
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise ValueError(f"{source}: row {lineno}: expected 5 fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                cols[j].append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{source}: row {lineno}: non-numeric value {cell!r} in column "
                    f"{CSV_COLUMNS[j]}"
                ) from None
    if not cols[0]:
        raise ValueError(f"{source}: empty dataset (header only)")
    for j in (1, 3):
        for i, v in enumerate(cols[j]):
            if v not in (0.0, 1.0):
                raise ValueError(
                    f"{source}: row {i + 2}: column {CSV_COLUMNS[j]} must be 0 or 1, got {v}"
                )
    try:
        return Dataset(cols[0], cols[1], cols[2], cols[3], cols[4])
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None


def load_csv(path) -> Dataset:
    """Read a dataset from a CSV file with header y,delta,ztilde,dtilde,w."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_rows(csv.reader(fh), str(path))


def loads_csv(text: str) -> Dataset:
    return _parse_rows(csv.reader(io.StringIO(text)), "<string>")


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset; floats carry 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(dataset.n):
            fh.write(
                f"{fmt_float(dataset.y[i])},{int(dataset.delta[i])},"
                f"{fmt_float(dataset.ztilde[i])},{int(dataset.dtilde[i])},"
                f"{fmt_float(dataset.w[i])}\n"
            )
