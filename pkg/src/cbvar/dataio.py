"""
Loading FRED-MD style monthly panels and cutting them into recursive
estimation/evaluation windows.

The CSV layout is one header row of series names with the first column
holding dates (``YYYY-MM``; full dates such as ``1/1/1974`` are accepted and
truncated to the month). A FRED-MD ``Transform:`` row, if present, is skipped:
transformations are taken from :data:`DEFAULT_TRANSFORMS` or an override file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Raised for malformed or insufficient input data."""


SMALL = ("UNRATE", "CPIAUCSL", "FEDFUNDS")
MEDIUM = SMALL + ("NONBORRES", "M2REAL", "TOTRESNS")
LARGE = MEDIUM + (
    "INDPRO",
    "RPI",
    "S.P.500",
    "CUMFNS",
    "T10YFFM",
    "AWHMAN",
    "M1SL",
    "EXUSUKx",
    "HOUST",
)

# level | log | log100 | dlog_ann | signedlog
DEFAULT_TRANSFORMS = {
    "UNRATE": "level",
    "CPIAUCSL": "dlog_ann",
    "FEDFUNDS": "level",
    "NONBORRES": "signedlog",
    "M2REAL": "log",
    "TOTRESNS": "log",
    "INDPRO": "log",
    "RPI": "log",
    "S.P.500": "log",
    "CUMFNS": "level",
    "T10YFFM": "level",
    "AWHMAN": "level",
    "M1SL": "log",
    "EXUSUKx": "log",
    "HOUST": "log",
}

TRANSFORMS = ("level", "log", "log100", "dlog_ann", "signedlog")


@dataclass(frozen=True)
class ModelSizeSpec:
    name: str
    variables: tuple[str, ...]


MODEL_SIZES = {
    "small": ModelSizeSpec("small", SMALL),
    "medium": ModelSizeSpec("medium", MEDIUM),
    "large": ModelSizeSpec("large", LARGE),
}


@dataclass(frozen=True)
class Dataset:
    """Aligned monthly multivariate series.

    Attributes
    ----------
    dates : np.ndarray
        ``datetime64[M]`` index, strictly increasing and contiguous.
    values : np.ndarray
        T x M matrix of (transformed) observations.
    names : tuple of str
        Series identifiers, in model order.
    transforms : tuple of str
        Transformation applied to each series.
    provenance : dict
        Source file, its sha256 and any flags raised while loading.
    """

    dates: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    transforms: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        dates = np.asarray(self.dates, dtype="datetime64[M]")
        if len(dates) != values.shape[0]:
            raise DataError("dates and values have different lengths")
        if values.shape[1] != len(self.names):
            raise DataError("number of names does not match number of columns")
        if len(dates) > 1 and np.any(np.diff(dates).astype(int) != 1):
            raise DataError("dates must be strictly increasing and monthly-contiguous")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "names", tuple(self.names))
        if not self.transforms:
            object.__setattr__(self, "transforms", ("level",) * len(self.names))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values, names=None, start="2000-01") -> "Dataset":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            names = tuple(f"y{i + 1}" for i in range(values.shape[1]))
        dates = np.datetime64(start, "M") + np.arange(values.shape[0])
        return cls(dates=dates, values=values, names=tuple(names))

    def window(self, start=None, end=None) -> "Dataset":
        """Restrict to ``start <= date <= end`` (inclusive, ``YYYY-MM``)."""
        mask = np.ones(self.T, dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(start, "M")
        if end is not None:
            mask &= self.dates <= np.datetime64(end, "M")
        if not mask.any():
            raise DataError(f"window {start}:{end} selects no observations")
        return replace(self, dates=self.dates[mask], values=self.values[mask])

    def check_finite(self):
        bad = np.argwhere(~np.isfinite(self.values))
        if len(bad):
            row, col = bad[0]
            raise DataError(
                f"missing value for {self.names[col]} at {self.dates[row]}"
            )

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.names.index(n) for n in names]
        return replace(
            self,
            values=self.values[:, idx],
            names=tuple(names),
            transforms=tuple(self.transforms[i] for i in idx),
        )

    def prepend(self, other: "Dataset") -> "Dataset":
        """Put the columns of ``other`` in front of this dataset's columns."""
        if not np.array_equal(self.dates, other.dates):
            raise DataError("cannot combine datasets with different date index")
        return replace(
            self,
            values=np.hstack([other.values, self.values]),
            names=other.names + self.names,
            transforms=other.transforms + self.transforms,
        )


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_transform_config(path) -> dict[str, str]:
    """Read ``name = transform`` pairs from an INI-style file.

    Keys may sit at top level or under a ``[transforms]`` section.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[transforms]\n" + text
    parser.read_string(text)
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            value = value.strip().strip('"').strip("'")
            if value not in TRANSFORMS:
                raise DataError(f"unknown transform {value!r} for {key}")
            out[key.strip().strip('"')] = value
    return out


def apply_transform(x: np.ndarray, how: str, name: str = "") -> tuple[np.ndarray, bool]:
    """Transform one raw series; returns the result and a flag set when the
    signed-log rule actually met non-positive values."""
    x = np.asarray(x, dtype=float)
    flagged = False
    if how == "level":
        return x.copy(), flagged
    if how in ("log", "log100", "dlog_ann"):
        if np.any(x[np.isfinite(x)] <= 0):
            raise DataError(f"series {name} has non-positive values; cannot take logs")
        lx = np.log(x)
        if how == "log":
            return lx, flagged
        if how == "log100":
            return 100.0 * lx, flagged
        out = np.full_like(lx, np.nan)
        out[1:] = 1200.0 * np.diff(lx)
        return out, flagged
    if how == "signedlog":
        flagged = bool(np.any(x[np.isfinite(x)] <= 0))
        return np.sign(x) * np.log1p(np.abs(x)), flagged
    raise DataError(f"unknown transform {how!r}")


def _parse_dates(col: pd.Series) -> np.ndarray:
    s = col.astype(str).str.strip()
    iso = s.str.fullmatch(r"\d{4}-\d{2}")
    if iso.all():
        return np.array(s.tolist(), dtype="datetime64[M]")
    parsed = pd.to_datetime(s, errors="coerce")
    if parsed.isna().any():
        bad = s[parsed.isna()].iloc[0]
        raise DataError(f"unparseable date {bad!r}")
    return parsed.values.astype("datetime64[M]")


def load_csv(
    path,
    spec: ModelSizeSpec | Sequence[str] | None = None,
    window: tuple[str | None, str | None] | None = None,
    transforms: dict[str, str] | None = None,
) -> Dataset:
    """Load, select, transform and window a panel.

    Transformations are applied on the full file before windowing, so
    differenced series keep their first in-window observation. Without an
    explicit window start, leading rows made incomplete by differencing are
    dropped; an explicit window must be complete.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    first = frame.columns[0]
    is_meta = frame[first].astype(str).str.strip().str.lower().str.startswith("transform")
    frame = frame.loc[~is_meta].reset_index(drop=True)
    dates = _parse_dates(frame[first])
    if len(dates) > 1 and np.any(np.diff(dates).astype(int) != 1):
        raise DataError("dates must be strictly increasing and monthly-contiguous")

    if spec is None:
        names = tuple(c for c in frame.columns[1:])
    elif isinstance(spec, ModelSizeSpec):
        names = spec.variables
    else:
        names = tuple(spec)
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")

    table = dict(DEFAULT_TRANSFORMS)
    if transforms:
        table.update(transforms)
    cols, used, flags = [], [], []
    for name in names:
        raw = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
        how = table.get(name, "level")
        out, flagged = apply_transform(raw, how, name)
        if flagged:
            flags.append(f"{name}: signed-log applied to non-positive values")
        cols.append(out)
        used.append(how)
    values = np.column_stack(cols) if cols else np.empty((len(dates), 0))

    ds = Dataset(
        dates=dates,
        values=values,
        names=names,
        transforms=tuple(used),
        provenance={"source": str(path), "sha256": _file_hash(path), "flags": flags},
    )
    start, end = window if window is not None else (None, None)
    if start is None:
        complete = np.all(np.isfinite(ds.values), axis=1)
        if not complete.any():
            raise DataError("no complete observation in file")
        start = str(ds.dates[np.argmax(complete)])
    if end is not None and np.datetime64(end, "M") > ds.dates[-1]:
        raise DataError(f"window end {end} beyond last observation {ds.dates[-1]}")
    if np.datetime64(start, "M") < ds.dates[0]:
        raise DataError(f"window start {start} before first observation {ds.dates[0]}")
    ds = ds.window(start, end)
    ds.check_finite()
    return ds


def write_csv(data: Dataset, path) -> None:
    """Write in the loader's layout. Values use repr() so reloads are exact."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(("date",) + data.names) + "\n")
        for d, row in zip(data.dates, data.values):
            fh.write(str(d) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class Split:
    """One recursive forecast origin.

    ``realized`` is max_h x M; row h-1 holds the value h months after the
    origin, NaN where unavailable or beyond the evaluation cut.
    """

    origin: np.datetime64
    train: Dataset
    realized: np.ndarray
    target_dates: np.ndarray


def recursive_windows(
    data: Dataset,
    first_estimation_end,
    last_date=None,
    max_h: int = 12,
    eval_end=None,
) -> Iterator[Split]:
    """Expanding-window splits, one per month.

    The first split estimates through ``first_estimation_end``; origins
    continue while at least the one-step-ahead value exists on or before
    ``last_date``. ``eval_end`` masks realized values dated after it.
    """
    first = np.datetime64(first_estimation_end, "M")
    last = data.dates[-1] if last_date is None else np.datetime64(last_date, "M")
    if first < data.dates[0] or last > data.dates[-1] or first >= last:
        raise DataError(
            f"windows {first}..{last} do not fit data range {data.dates[0]}..{data.dates[-1]}"
        )
    cut = None if eval_end is None else np.datetime64(eval_end, "M")
    start_idx = int((first - data.dates[0]).astype(int))
    last_idx = int((last - data.dates[0]).astype(int))
    for end_idx in range(start_idx, last_idx):
        train = replace(
            data,
            dates=data.dates[: end_idx + 1],
            values=data.values[: end_idx + 1],
        )
        targets = data.dates[end_idx] + np.arange(1, max_h + 1)
        realized = np.full((max_h, data.M), np.nan)
        avail = min(max_h, last_idx - end_idx)
        realized[:avail] = data.values[end_idx + 1 : end_idx + 1 + avail]
        if cut is not None:
            realized[targets > cut] = np.nan
        yield Split(data.dates[end_idx], train, realized, targets)
