"""File formats, synthetic generators and trace serialization.

Formats (all UTF-8):

* basket text: one basket per line, whitespace-separated item ids.
* column CSV: ``index,v0..v{d-1},b0..b{d-1}`` records, preceded by ``#``
  comment lines carrying ``d`` and the row-major ``C``.
* metric traces: CSV with ``#`` reproduction comments, then a header row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence, TypeVar

import numpy as np

from .core import NdppModel, random_model
from .inference import StreamPoint

T = TypeVar("T")


class BasketFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class BasketEvent:
    items: tuple[int, ...]
    line: int = 0

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


@dataclass
class DatasetManifest:
    path: Path
    format: str = "basket-text"
    n: int | None = None
    dmax: int | None = None

    def __post_init__(self):
        self.path = Path(self.path)
        if self.format not in ("basket-text", "model-json", "column-csv"):
            raise ValueError(f"unknown dataset format {self.format!r}")


class BasketReader:
    """Lazily reads a basket file, one line at a time.

    Baskets larger than ``dmax`` are dropped and counted in ``dropped``.
    With ``n`` set, an item id >= n raises IndexError.
    """

    def __init__(self, path: str | Path, n: int | None = None, dmax: int | None = None):
        self.path = Path(path)
        self.n = n
        self.dmax = dmax
        self.dropped = 0
        self.count = 0
        self.max_item = -1

    def __iter__(self) -> Iterator[BasketEvent]:
        self.dropped = self.count = 0
        try:
            fh = self.path.open(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot open basket file {self.path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.split()
                if not fields:
                    continue
                try:
                    items = [int(x) for x in fields]
                except ValueError:
                    raise BasketFormatError(self.path, lineno, f"non-integer item in {line.strip()!r}") from None
                if min(items) < 0:
                    raise BasketFormatError(self.path, lineno, "negative item id")
                if len(set(items)) != len(items):
                    raise BasketFormatError(self.path, lineno, "duplicate item in basket")
                top = max(items)
                if self.n is not None and top >= self.n:
                    raise IndexError(f"{self.path}:{lineno}: item {top} out of range for n={self.n}")
                if self.dmax is not None and len(items) > self.dmax:
                    self.dropped += 1
                    continue
                self.count += 1
                self.max_item = max(self.max_item, top)
                yield BasketEvent(tuple(sorted(items)), lineno)


def load_baskets(source: DatasetManifest | str | Path, n: int | None = None,
                 dmax: int | None = None) -> BasketReader:
    if isinstance(source, DatasetManifest):
        if source.format != "basket-text":
            raise ValueError(f"load_baskets needs basket-text, got {source.format}")
        return BasketReader(source.path, source.n, source.dmax)
    return BasketReader(source, n, dmax)


def write_baskets(baskets: Iterable[Iterable[int]], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in baskets:
            fh.write(" ".join(str(i) for i in b) + "\n")
            count += 1
    return count


@dataclass
class SyntheticSpec:
    n: int
    d: int
    length: int = 0
    seed: int = 0
    mean_basket: float = 3.0
    max_basket: int | None = None
    adversarial: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ValueError(f"d must be a positive even integer, got {self.d}")
        if self.n < 1:
            raise ValueError("n must be positive")


def generate_synthetic_model(spec: SyntheticSpec) -> NdppModel:
    return random_model(spec.n, spec.d, np.random.default_rng(spec.seed), scale=spec.scale)


def generate_baskets(spec: SyntheticSpec, model: NdppModel | None = None) -> list[list[int]]:
    """``spec.length`` baskets from a planted model.

    For n <= 15 the baskets are exact draws from the model (empty draws are
    discarded and redrawn). Larger universes use a planted block structure
    instead: items are split into groups of size d and each basket is a
    random subset of one group.
    """
    from .learning import MAX_EXACT_N, ExactSampler

    rng = np.random.default_rng([spec.seed, 2])
    out: list[list[int]] = []
    if spec.n <= MAX_EXACT_N:
        sampler = ExactSampler(model if model is not None else generate_synthetic_model(spec))
        while len(out) < spec.length:
            for b in sampler.iter_samples(rng, spec.length):
                if b and (spec.max_basket is None or len(b) <= spec.max_basket):
                    out.append(b)
                    if len(out) == spec.length:
                        break
    else:
        groups = [list(range(s, min(s + spec.d, spec.n))) for s in range(0, spec.n, spec.d)]
        cap = spec.d if spec.max_basket is None else min(spec.d, spec.max_basket)
        for _ in range(spec.length):
            g = groups[rng.integers(len(groups))]
            size = int(min(len(g), cap, 1 + rng.poisson(max(spec.mean_basket - 1.0, 0.0))))
            out.append(sorted(rng.choice(g, size=size, replace=False).tolist()))
    if spec.adversarial:
        out.sort()
    return out


def permute_stream(stream: Iterable[T], seed: int) -> list[T]:
    """Uniformly random reordering of a (desk-scale) stream."""
    items = list(stream)
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in order]


# -- column stream -----------------------------------------------------------

def write_column_stream(model: NdppModel, path: str | Path, order: Sequence[int] | None = None) -> None:
    order = range(model.n) if order is None else order
    d = model.d
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# d={d}\n")
        fh.write(f"# C={json.dumps(model.C.ravel().tolist())}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"v{j}" for j in range(d)] + [f"b{j}" for j in range(d)])
        for i in order:
            w.writerow([i] + [_fmt(x) for x in model.V[:, i]] + [_fmt(x) for x in model.B[:, i]])


class ColumnStream:
    """Iterates a column CSV without loading it; ``C`` and ``d`` come from the header."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.d, self.C = self._read_header()

    def _read_header(self) -> tuple[int, np.ndarray]:
        d = C = None
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition("=")
                if key == "d":
                    d = int(value)
                elif key == "C":
                    C = np.asarray(json.loads(value), dtype=np.float64)
        if d is None or C is None or C.size != d * d:
            raise ValueError(f"{self.path}: column stream header must carry d and C")
        return d, C.reshape(d, d)

    def __len__(self) -> int:
        with self.path.open(encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip() and not line.startswith("#")) - 1

    def __iter__(self) -> Iterator[StreamPoint]:
        d = self.d
        with self.path.open(encoding="utf-8") as fh:
            rows = csv.reader(line for line in fh if not line.startswith("#"))
            header = next(rows, None)
            if header is None or len(header) != 1 + 2 * d:
                raise ValueError(f"{self.path}: expected {1 + 2 * d} columns")
            for lineno, row in enumerate(rows, start=2):
                if len(row) != 1 + 2 * d:
                    raise ValueError(f"{self.path}: record {lineno} has {len(row)} fields")
                vals = np.array(row[1:], dtype=np.float64)
                yield StreamPoint(int(row[0]), vals[:d], vals[d:])


# -- metric traces -----------------------------------------------------------

INT_COLUMNS = {"step", "det_evals", "swaps", "basket_size", "skipped"}
STR_COLUMNS = {"algorithm"}

INFERENCE_COLUMNS = ("step", "algorithm", "objective", "det_evals", "swaps")
LEARNING_COLUMNS = ("step", "basket_size", "psi", "skipped")


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _parse(column: str, text: str):
    if column in INT_COLUMNS:
        return int(text)
    if column in STR_COLUMNS:
        return text
    return float(text)


@dataclass
class MetricTrace:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    def append(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(values))


def write_trace(trace: MetricTrace, path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            for key, value in trace.meta.items():
                fh.write(f"# {key}: {value}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trace.columns)
            for row in trace.rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc


def read_trace(path: str | Path) -> MetricTrace:
    path = Path(path)
    meta: dict[str, str] = {}
    try:
        with path.open(encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc}") from exc
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
        elif line:
            body.append(line)
    if not body:
        raise ValueError(f"{path}: missing header row")
    reader = csv.reader(body)
    columns = tuple(next(reader))
    rows = [tuple(_parse(c, x) for c, x in zip(columns, row)) for row in reader]
    return MetricTrace(columns, rows, meta)
