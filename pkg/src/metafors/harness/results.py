"""Result rows, the versioned CSV format, and summaries over replicates."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "SCHEMA",
    "ResultRow",
    "COLUMNS",
    "format_rows",
    "write_results",
    "read_results",
    "summarize",
    "write_summary",
    "STATS",
]

SCHEMA = 1
STATS = ("mean", "median", "stderr")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    replicate: int
    seed: int
    point: int
    system: str
    mu: Optional[float]
    a: Optional[float]
    omega_t: Optional[float]
    v1: Optional[float]
    n_test: int
    noise_test: float
    noise_train: float
    t_valid: float
    censored: bool
    epsilon: Optional[float]
    diverged: bool
    escaped: Optional[bool]
    ks: Optional[float]


COLUMNS = tuple(f.name for f in dataclasses.fields(ResultRow))
_INT = {"replicate", "seed", "point", "n_test"}
_BOOL = {"censored", "diverged", "escaped"}
_STR = {"experiment", "method", "system"}
PARAMS = ("mu", "a", "omega_t", "v1")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _STR:
        return text
    if name in _INT:
        return int(text)
    if name in _BOOL:
        return text == "1"
    return float(text)


def format_rows(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def write_results(path: Union[str, Path], rows: Iterable[ResultRow]) -> None:
    Path(path).write_text(format_rows(rows))


def read_results(path: Union[str, Path]) -> List[ResultRow]:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError(f"{path}: missing '# schema=' header line")
    schema = int(lines[0].split("=", 1)[1])
    if schema != SCHEMA:
        raise ValueError(f"{path}: unsupported schema {schema}")
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    return [ResultRow(**{c: _parse(c, v) for c, v in zip(header, rec)}) for rec in reader]


def _stat(values: Sequence[float], stat: str) -> float:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return math.nan
    if stat == "mean":
        return float(np.mean(x))
    if stat == "median":
        return float(np.median(x))
    if x.size < 2:
        return math.nan
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


SUMMARY_KEYS = {
    "point": ("method", "system", "point") + PARAMS + ("n_test", "noise_test", "noise_train"),
    "n_test": ("method", "n_test", "noise_test", "noise_train"),
}


def summarize(rows: Sequence[ResultRow], stat: str = "mean", by: str = "point") -> List[Dict[str, object]]:
    """Aggregate rows over replicates (``by="point"``) or over replicates and test points (``by="n_test"``).

    Censored valid times enter at their horizon value; ``n_censored`` counts
    them. The escape column is the escaped fraction regardless of ``stat``.
    """
    if stat not in STATS:
        raise ValueError(f"unknown statistic {stat!r}; use one of {', '.join(STATS)}")
    if by not in SUMMARY_KEYS:
        raise ValueError(f"unknown grouping {by!r}; use 'point' or 'n_test'")
    experiments = {r.experiment for r in rows}
    if len(experiments) > 1:
        raise ValueError(f"results mix experiments: {', '.join(sorted(experiments))}")
    keys = SUMMARY_KEYS[by]
    groups: Dict[Tuple, List[ResultRow]] = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    out = []
    for key, members in groups.items():
        eps = [r.epsilon for r in members if r.epsilon is not None]
        ks = [r.ks for r in members if r.ks is not None]
        esc = [r.escaped for r in members if r.escaped is not None]
        rec: Dict[str, object] = dict(zip(keys, key))
        rec.update(
            n=len(members),
            n_censored=sum(r.censored for r in members),
            t_valid=_stat([r.t_valid for r in members], stat),
            epsilon=_stat(eps, stat) if eps else None,
            ks=_stat(ks, stat) if ks else None,
            escaped_fraction=(sum(esc) / len(esc)) if esc else None,
        )
        out.append(rec)
    return out


def write_summary(summary: List[Dict[str, object]], stat: str, out=None) -> str:
    if not summary:
        text = f"# schema={SCHEMA} stat={stat}\n"
    else:
        buf = io.StringIO()
        buf.write(f"# schema={SCHEMA} stat={stat}\n")
        writer = csv.writer(buf, lineterminator="\n")
        cols = list(summary[0])
        writer.writerow(cols)
        for rec in summary:
            writer.writerow([_cell(rec[c]) for c in cols])
        text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text
