"""Fit the linear order-flow intensity model to bucketed trade data.

Ticks carry the external midprice ``s``, the pool price ``z`` and the side of
any pool trade. Trades are counted in fixed windows, scaled to jumps per day,
and regressed on the mean mispricing ``S - Z`` of the window.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TickFormatError",
    "CalibrationError",
    "TickRecord",
    "LoadIssue",
    "TickSet",
    "TradeBucket",
    "CalibrationResult",
    "load_ticks",
    "write_ticks",
    "bucketize",
    "fit_intensities",
    "write_residuals",
    "synthetic_buckets",
    "synthetic_ticks",
]

REQUIRED_COLUMNS = ("timestamp", "s", "z", "side", "size")
SIDES = ("buy", "sell", "none")
MINUTES_PER_DAY = 1440
MS_PER_MINUTE = 60_000


class TickFormatError(ValueError):
    """The tick file is missing, empty or lacks required columns."""


class CalibrationError(ValueError):
    """The bucketed data cannot identify the intensity model."""


@dataclass(frozen=True)
class TickRecord:
    """One observation. ``side`` is the LT side of a pool trade (``buy``
    takes ETH out of the pool) or ``none`` for a pure price update."""

    timestamp: int  # UTC milliseconds
    s: float
    z: float
    side: str = "none"
    size: float = 0.0
    y: float = math.nan  # pool ETH reserves, optional


@dataclass(frozen=True)
class LoadIssue:
    line: int
    message: str


@dataclass
class TickSet:
    """Parsed records plus the rows that were rejected."""

    records: list[TickRecord]
    issues: list[LoadIssue] = field(default_factory=list)
    source: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _parse_timestamp(raw: str) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def _parse_row(row: dict[str, str], has_y: bool) -> TickRecord:
    ts = _parse_timestamp(row["timestamp"])
    s, z = float(row["s"]), float(row["z"])
    if not (math.isfinite(s) and s > 0 and math.isfinite(z) and z > 0):
        raise ValueError(f"prices must be positive (s={s}, z={z})")
    side = row["side"].strip().lower() or "none"
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    size = float(row["size"] or 0.0)
    if not (math.isfinite(size) and size >= 0):
        raise ValueError(f"size must be >= 0, got {size}")
    y = float(row["y"]) if has_y and row.get("y") not in (None, "") else math.nan
    return TickRecord(ts, s, z, side, size, y)


def load_ticks(path: str | Path, strict: bool = False) -> TickSet:
    """Read a ``timestamp,s,z,side,size[,y]`` CSV.

    Malformed rows are skipped and listed in :attr:`TickSet.issues` with their
    line numbers; in ``strict`` mode the first one raises. Records are sorted
    stably by timestamp.
    """
    path = Path(path)
    if not path.is_file():
        raise TickFormatError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise TickFormatError(f"{path}: file is empty")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise TickFormatError(f"{path}: missing columns {missing}")
        reader.fieldnames = header
        has_y = "y" in header
        records, issues = [], []
        for row in reader:
            try:
                records.append(_parse_row(row, has_y))
            except (ValueError, TypeError, KeyError) as exc:
                issue = LoadIssue(reader.line_num, str(exc))
                if strict:
                    raise TickFormatError(f"{path}:{issue.line}: {issue.message}") from exc
                issues.append(issue)
    if not records:
        raise TickFormatError(f"{path}: no valid records")
    records.sort(key=lambda r: r.timestamp)
    return TickSet(records, issues, str(path))


def write_ticks(records: Iterable[TickRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS + ("y",))
        for r in records:
            w.writerow([int(r.timestamp), repr(float(r.s)), repr(float(r.z)), r.side,
                        repr(float(r.size)), "" if math.isnan(r.y) else repr(float(r.y))])


@dataclass(frozen=True)
class TradeBucket:
    """Counts in ``[window_start, window_start + window)`` scaled to jumps/day.

    ``carried`` marks windows with no ticks, whose mispricing is carried
    forward from the previous window.
    """

    window_start: int
    lambda_minus_hat: float
    lambda_plus_hat: float
    mean_mispricing: float
    n_buy: int = 0
    n_sell: int = 0
    mean_y: float = math.nan
    carried: bool = False


def bucketize(records: Sequence[TickRecord], window_minutes: float = 10) -> list[TradeBucket]:
    """Aggregate ticks into half-open windows aligned to multiples of the width."""
    if len(records) == 0:
        raise CalibrationError("no records to bucketize")
    if window_minutes <= 0:
        raise ValueError("window_minutes must be positive")
    width = int(round(window_minutes * MS_PER_MINUTE))
    scale = MINUTES_PER_DAY / window_minutes
    ts = np.fromiter((r.timestamp for r in records), dtype=np.int64, count=len(records))
    gap = np.fromiter((r.s - r.z for r in records), dtype=float, count=len(records))
    ys = np.fromiter((r.y for r in records), dtype=float, count=len(records))
    sides = [r.side for r in records]
    buy = np.fromiter((s == "buy" for s in sides), dtype=bool, count=len(records))
    sell = np.fromiter((s == "sell" for s in sides), dtype=bool, count=len(records))

    first = (ts.min() // width) * width
    idx = (ts - first) // width
    n = int(idx.max()) + 1
    n_ticks = np.bincount(idx, minlength=n)
    n_buy = np.bincount(idx, weights=buy, minlength=n)
    n_sell = np.bincount(idx, weights=sell, minlength=n)
    gap_sum = np.bincount(idx, weights=gap, minlength=n)
    finite_y = np.isfinite(ys)
    y_sum = np.bincount(idx[finite_y], weights=ys[finite_y], minlength=n)
    y_cnt = np.bincount(idx[finite_y], minlength=n)

    out, last_gap, last_y = [], 0.0, math.nan
    for k in range(n):
        carried = n_ticks[k] == 0
        if not carried:
            last_gap = gap_sum[k] / n_ticks[k]
        if y_cnt[k]:
            last_y = y_sum[k] / y_cnt[k]
        out.append(TradeBucket(int(first + k * width), float(n_buy[k] * scale),
                               float(n_sell[k] * scale), float(last_gap), int(n_buy[k]),
                               int(n_sell[k]), float(last_y), bool(carried)))
    return out


@dataclass(frozen=True)
class CalibrationResult:
    a1_hat: float
    a3_hat: float
    a1_se: float
    a3_se: float
    n_buckets: int
    boundary_d: float
    violations_left: int
    violations_right: int
    violation_fraction: float
    a2_hat: float | None = None
    a2_se: float | None = None
    per_side: dict = field(default_factory=dict)

    def violations_at(self, d: float, buckets: Sequence[TradeBucket]) -> tuple[int, int]:
        m = np.array([b.mean_mispricing for b in buckets])
        return int(np.sum(m < -d)), int(np.sum(m > d))

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = len(y) - X.shape[1]
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return beta, np.sqrt(np.diag(cov))


def fit_intensities(buckets: Sequence[TradeBucket], estimate_a2: bool = False) -> CalibrationResult:
    """Stacked OLS of ``lambda_hat`` on the signed mispricing.

    Buy windows enter with regressor ``S - Z`` and sell windows with
    ``Z - S``; both share the intercept ``a1`` and slope ``a3``. With
    ``estimate_a2`` the mean pool reserves enter as a further regressor.
    All buckets are used, including those where the intensity floor binds.
    """
    n = len(buckets)
    if n < 10:
        raise CalibrationError(f"need at least 10 buckets, got {n}")
    m = np.array([b.mean_mispricing for b in buckets])
    if not np.ptp(m) > 0:
        raise CalibrationError("mispricing has zero variance; slope is not identified")
    lam_m = np.array([b.lambda_minus_hat for b in buckets])
    lam_p = np.array([b.lambda_plus_hat for b in buckets])
    y = np.concatenate([lam_m, lam_p])
    cols = [np.ones(2 * n), np.concatenate([m, -m])]
    if estimate_a2:
        ys = np.array([b.mean_y for b in buckets])
        if not np.all(np.isfinite(ys)):
            raise CalibrationError("estimate_a2 needs pool reserves in every bucket")
        cols.append(np.concatenate([ys, ys]))
    beta, se = _ols(np.column_stack(cols), y)
    a1, a3 = float(beta[0]), float(beta[1])
    if not a1 > 0:
        raise CalibrationError(f"fitted a1 = {a1:.4g} is not positive")
    d = a1 / a3 if a3 > 0 else math.inf
    left, right = int(np.sum(m < -d)), int(np.sum(m > d))

    per_side = {}
    for name, lam, sign in (("minus", lam_m, 1.0), ("plus", lam_p, -1.0)):
        b_side, se_side = _ols(np.column_stack([np.ones(n), sign * m]), lam)
        per_side[name] = {"a1": float(b_side[0]), "a3": float(b_side[1]),
                          "a1_se": float(se_side[0]), "a3_se": float(se_side[1])}
    return CalibrationResult(
        a1_hat=a1, a3_hat=a3, a1_se=float(se[0]), a3_se=float(se[1]), n_buckets=n,
        boundary_d=d, violations_left=left, violations_right=right,
        violation_fraction=(left + right) / n,
        a2_hat=float(beta[2]) if estimate_a2 else None,
        a2_se=float(se[2]) if estimate_a2 else None,
        per_side=per_side,
    )


def write_residuals(buckets: Sequence[TradeBucket], result: CalibrationResult,
                    path: str | Path) -> None:
    """Per-bucket observed and fitted intensities for both sides."""
    a2 = result.a2_hat or 0.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "side", "mispricing", "lambda_hat", "fitted", "residual"])
        for b in buckets:
            base = result.a1_hat + (a2 * b.mean_y if a2 else 0.0)
            for side, lam, sign in (("minus", b.lambda_minus_hat, 1.0),
                                    ("plus", b.lambda_plus_hat, -1.0)):
                fitted = base + sign * result.a3_hat * b.mean_mispricing
                w.writerow([b.window_start, side, repr(b.mean_mispricing), repr(lam),
                            repr(fitted), repr(lam - fitted)])


# synthetic data ------------------------------------------------------------------------

def _synthetic_draws(a1: float, a3: float, n_buckets: int, seed: int, mispricing_sd: float,
                     window_minutes: float, a0: float):
    rng = np.random.default_rng(seed)
    m = rng.normal(0.0, mispricing_sd, n_buckets)
    per_window = window_minutes / MINUTES_PER_DAY
    lam_m = np.maximum(a0, a1 + a3 * m)
    lam_p = np.maximum(a0, a1 - a3 * m)
    return rng, m, rng.poisson(lam_m * per_window), rng.poisson(lam_p * per_window)


def synthetic_buckets(a1: float = 142.7, a3: float = 13.6, n_buckets: int = 17_000,
                      seed: int = 0, mispricing_sd: float = 3.5, window_minutes: float = 10,
                      a0: float = 1e-3) -> list[TradeBucket]:
    """Buckets with Gaussian mispricing and Poisson counts at the model intensities.

    The default spread keeps ``|S - Z|`` inside ``a1 / a3`` for all but a few
    windows, so the floor ``a0`` rarely binds.
    """
    _, m, n_buy, n_sell = _synthetic_draws(a1, a3, n_buckets, seed, mispricing_sd,
                                           window_minutes, a0)
    scale = MINUTES_PER_DAY / window_minutes
    width = int(round(window_minutes * MS_PER_MINUTE))
    return [TradeBucket(k * width, float(b * scale), float(s * scale), float(g), int(b), int(s))
            for k, (g, b, s) in enumerate(zip(m, n_buy, n_sell))]


def synthetic_ticks(a1: float = 142.7, a3: float = 13.6, n_buckets: int = 17_000,
                    seed: int = 0, mispricing_sd: float = 3.5, window_minutes: float = 10,
                    a0: float = 1e-3, price: float = 2820.0, size: float = 300.0,
                    start_ms: int = 1_640_995_200_000) -> list[TickRecord]:
    """Tick stream whose buckets reproduce :func:`synthetic_buckets` exactly.

    Every tick in a window carries the same ``s`` and ``z``; one price-only
    tick opens each window and trades follow at random times inside it.
    """
    rng, m, n_buy, n_sell = _synthetic_draws(a1, a3, n_buckets, seed, mispricing_sd,
                                             window_minutes, a0)
    width = int(round(window_minutes * MS_PER_MINUTE))
    out = []
    for k in range(n_buckets):
        t0 = start_ms + k * width
        s, z = float(price + 0.5 * m[k]), float(price - 0.5 * m[k])
        out.append(TickRecord(t0, s, z))
        n_trades = int(n_buy[k] + n_sell[k])
        if n_trades:
            times = np.sort(rng.integers(t0, t0 + width, n_trades))
            sides = ["buy"] * int(n_buy[k]) + ["sell"] * int(n_sell[k])
            rng.shuffle(sides)
            out.extend(TickRecord(int(t), s, z, side, size) for t, side in zip(times, sides))
    return out
