"""Trial + target datasets: representation, validation and CSV I/O.

CSV layout is ``S,T,Y,<feat1>,...,<featp>``; ``T`` and ``Y`` are empty cells on
target (``S=0``) rows.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rootopt.errors import EmptyArm, EmptyData, IoError, NonFinite, ParseError, SchemaError

log = logging.getLogger(__name__)


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates for all rows plus treatment/outcome for trial rows.

    ``t`` and ``y`` have length ``n`` and hold NaN on target rows.
    """

    x: np.ndarray
    s: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]

    @classmethod
    def from_arrays(
        cls,
        x,
        s,
        t=None,
        y=None,
        feature_names: Sequence[str] | None = None,
        strict: bool = True,
    ) -> "Dataset":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n, p = x.shape
        s = np.asarray(s).astype(np.int8)
        if s.shape != (n,):
            raise SchemaError(f"S has shape {s.shape}, expected ({n},)")
        if not np.isin(s, (0, 1)).all():
            raise SchemaError("S must be 0/1")
        trial = s == 1
        t = np.full(n, np.nan) if t is None else np.asarray(t, dtype=float).copy()
        y = np.full(n, np.nan) if y is None else np.asarray(y, dtype=float).copy()
        if t.shape != (n,) or y.shape != (n,):
            raise SchemaError("T and Y must have one entry per row")
        for name, col in (("T", t), ("Y", y)):
            if np.isnan(col[trial]).any():
                raise SchemaError(f"{name} missing on a trial (S=1) row")
            if not np.isnan(col[~trial]).all():
                raise SchemaError(f"{name} present on a target (S=0) row")
        if not np.isfinite(y[trial]).all():
            raise NonFinite("non-finite outcome on a trial row")
        if not np.isin(t[trial], (0.0, 1.0)).all():
            raise SchemaError("T must be 0/1 on trial rows")
        if not np.isfinite(x).all():
            raise NonFinite("covariates contain non-finite values")
        if feature_names is None:
            feature_names = [f"X{j}" for j in range(p)]
        feature_names = tuple(str(f) for f in feature_names)
        if len(feature_names) != p:
            raise SchemaError(f"{len(feature_names)} feature names for {p} columns")

        n1 = int(trial.sum())
        if n1 < 2 or n - n1 < 1:
            raise EmptyData(f"need n1 >= 2 trial rows and n0 >= 1 target rows (got n1={n1}, n0={n - n1})")
        n_treated = int((t[trial] == 1).sum())
        if n_treated in (0, n1):
            msg = "trial has no control units" if n_treated == n1 else "trial has no treated units"
            if strict:
                raise EmptyArm(msg)
            log.warning(msg)
        return cls(
            x=_frozen(x, float),
            s=_frozen(s, np.int8),
            t=_frozen(t, float),
            y=_frozen(y, float),
            feature_names=feature_names,
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def trial(self) -> np.ndarray:
        return self.s == 1

    @property
    def n1(self) -> int:
        return int(self.s.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset.from_arrays(
            self.x[rows], self.s[rows], self.t[rows], self.y[rows], self.feature_names, strict=False
        )


def _fmt(v: float) -> str:
    # repr is the shortest string that parses back to the same double
    return repr(float(v))


def write_csv(d: Dataset, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["S", "T", "Y", *d.feature_names])
            for i in range(d.n):
                if d.s[i] == 1:
                    head = ["1", str(int(d.t[i])), _fmt(d.y[i])]
                else:
                    head = ["0", "", ""]
                w.writerow(head + [_fmt(v) for v in d.x[i]])
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _cell(v: str, line: int, col: str) -> float:
    try:
        out = float(v)
    except ValueError:
        raise ParseError(f"line {line}: cannot parse {col}={v!r}") from None
    return out


def load_csv(path, strict: bool = True) -> Dataset:
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if "S" not in header:
            raise SchemaError("missing S column")
        if header[:3] != ["S", "T", "Y"]:
            raise SchemaError(f"header must start with S,T,Y (got {header[:3]})")
        features = header[3:]
        if not features:
            raise SchemaError("no feature columns")
        xs, ss, ts, ys = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} cells, got {len(row)}")
            s_cell, t_cell, y_cell = (c.strip() for c in row[:3])
            if s_cell not in ("0", "1"):
                raise ParseError(f"line {line}: S must be 0 or 1, got {s_cell!r}")
            s = int(s_cell)
            if s == 1:
                if t_cell == "" or y_cell == "":
                    raise SchemaError(f"line {line}: T/Y absent on a trial row")
                t = _cell(t_cell, line, "T")
                y = _cell(y_cell, line, "Y")
            else:
                if t_cell != "" or y_cell != "":
                    raise SchemaError(f"line {line}: T/Y present on a target row")
                t = y = math.nan
            xs.append([_cell(c, line, features[j]) for j, c in enumerate(row[3:])])
            ss.append(s)
            ts.append(t)
            ys.append(y)
    if not ss:
        raise EmptyData(f"{path} has no data rows")
    return Dataset.from_arrays(np.array(xs, dtype=float), ss, ts, ys, features, strict=strict)


def validate(d: Dataset) -> dict:
    """Summarize sample sizes, arm counts and covariate balance; never raises."""
    trial = d.trial
    t = d.t[trial]
    n_t = int((t == 1).sum())
    n_c = int((t == 0).sum())
    warnings = []
    if n_c == 0:
        warnings.append("control arm empty")
    if n_t == 0:
        warnings.append("treated arm empty")
    features = {}
    for j, name in enumerate(d.feature_names):
        col = d.x[:, j]
        features[name] = {
            grp: {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}
            for grp, v in (("trial", col[trial]), ("target", col[~trial]))
        }
        tr, tg = col[trial], col[~trial]
        if tg.min() < tr.min() or tg.max() > tr.max():
            # target support extends past the trial's; positivity is diagnostic only
            features[name]["target_outside_trial_range"] = int(((tg < tr.min()) | (tg > tr.max())).sum())
    return {
        "n": d.n,
        "n1": d.n1,
        "n0": d.n0,
        "trial_fraction": d.n1 / d.n,
        "n_treated": n_t,
        "n_control": n_c,
        "features": features,
        "warnings": warnings,
    }
