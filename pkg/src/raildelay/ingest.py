"""Parsing of train running records and hourly per-station feature cubes.

Raw records carry minute-resolution delays in a 12-hour-clock CSV layout
(date, train, station, distance, scheduled/actual arrival and departure,
"xM Late" delay notation). Aggregation produces, per station and hour:
average and total arrival/departure delay, and the mean headway between
consecutive arrivals. All delays are converted from minutes to hours and
clamped at zero (early arrivals are treated as on time), and a mask marks
station-hours that saw at least one arrival.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass
from datetime import date as date_type
from datetime import datetime, timedelta

import numpy as np

from .railnet import RailGraph

log = logging.getLogger(__name__)

CHANNELS = (
    "avg_arrival_delay",
    "avg_departure_delay",
    "total_arrival_delay",
    "total_departure_delay",
    "headway",
)
N_FEATURES = len(CHANNELS)
SLOT_HOURS = 1.0
DEFAULT_HEADWAY_HOURS = 1.0

# Table-layout column names; a format descriptor may remap them.
DEFAULT_COLUMNS = {
    "date": "Date",
    "train_no": "Train No.",
    "train_name": "Train Name",
    "station_code": "Code",
    "station_name": "Station",
    "distance": "Dist.",
    "sched_arr": "Sch. Arr.",
    "act_arr": "Act. Arr.",
    "arr_delay": "Arr. Delay",
    "sched_dep": "Sch. Dep.",
    "act_dep": "Act. Dep.",
    "dep_delay": "Dep. Delay",
}

MAX_REJECT_FRACTION = 0.10

_MONTHS = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}
_DELAY_RE = re.compile(r"^\s*(?:(\d+)\s*H)?\s*(?:(\d+)\s*M)?\s*(LATE|EARLY)\s*$", re.IGNORECASE)
_ABSENT = {"", "-", "--", "n/a", "na", "none"}


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    """One train-at-station observation."""

    date: date_type
    train_no: str
    train_name: str
    station_code: str
    distance_km: float
    sched_arr: datetime | None
    act_arr: datetime | None
    sched_dep: datetime | None
    act_dep: datetime | None
    arr_delay_min: int | None
    dep_delay_min: int | None


@dataclass
class ParseResult:
    records: list[RunRecord]
    n_total: int
    n_rejected: int


@dataclass
class FeatureCube:
    """Hourly feature tensor X (N x F x T), target Y (N x T), arrival mask."""

    X: np.ndarray
    Y: np.ndarray
    mask: np.ndarray
    t_start: datetime

    @property
    def n_stations(self) -> int:
        return self.X.shape[0]

    @property
    def n_slots(self) -> int:
        return self.X.shape[2]

    def slot_of(self, t: datetime) -> int:
        return int((t - self.t_start) // timedelta(hours=1))


def _parse_date(text: str) -> date_type:
    text = text.strip()
    try:
        return date_type.fromisoformat(text)
    except ValueError:
        pass
    parts = text.replace(",", " ").split()
    if len(parts) == 3:
        day, month, year = parts
        month_key = month.rstrip(".").lower()
        if month_key in _MONTHS:
            return date_type(int(year), _MONTHS[month_key], int(day))
    raise ParseError(f"unparseable date {text!r}")


def _parse_clock(text: str, day: date_type) -> datetime | None:
    text = text.strip()
    if text.lower() in _ABSENT:
        return None
    try:
        base = datetime.strptime(text.upper(), "%I:%M %p")
    except ValueError:
        try:
            base = datetime.strptime(text, "%H:%M")
        except ValueError:
            raise ParseError(f"unparseable time {text!r}") from None
    return datetime(day.year, day.month, day.day, base.hour, base.minute)


def _parse_delay(text: str) -> int | None:
    text = text.strip()
    if text.lower() in _ABSENT:
        return None
    if text.lower() in {"on time", "ontime", "right time"}:
        return 0
    m = _DELAY_RE.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ParseError(f"unparseable delay {text!r}")
    minutes = int(m.group(1) or 0) * 60 + int(m.group(2) or 0)
    return -minutes if m.group(3).upper() == "EARLY" else minutes


def _parse_distance(text: str) -> float:
    text = text.strip().upper().removesuffix("KM").strip()
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"unparseable distance {text!r}") from None


def _resolve_actual(sched: datetime | None, act_clock: datetime | None,
                    delay_min: int | None) -> tuple[datetime | None, int | None]:
    """Pin the actual timestamp to an absolute datetime.

    The stated delay governs when present (it can exceed 24h, which a bare
    clock cannot express); the actual-time column then only cross-checks
    the clock face, with date rollover implied. Without a stated delay the
    actual clock is mapped to within +/-12h of schedule.
    """
    if sched is None:
        return act_clock, delay_min
    if delay_min is not None:
        act = sched + timedelta(minutes=delay_min)
        if act_clock is not None:
            clock_diff = abs((act.hour * 60 + act.minute) - (act_clock.hour * 60 + act_clock.minute))
            if min(clock_diff, 1440 - clock_diff) > 1:
                raise ParseError(
                    f"actual clock {act_clock.time()} inconsistent with {delay_min}M delay"
                )
        return act, delay_min
    if act_clock is None:
        return None, None
    offset = (act_clock - sched).total_seconds() / 60.0
    offset = (offset + 720.0) % 1440.0 - 720.0  # wrap into (-12h, +12h]
    act = sched + timedelta(minutes=offset)
    return act, int(round(offset))


def parse_records(source, columns: dict | None = None) -> ParseResult:
    """Parse a running-records CSV into RunRecords.

    `source` is a path, text, or a file-like object. Unparseable rows are
    skipped and counted; more than 10% rejects is a hard error.
    """
    if hasattr(source, "read"):
        raw = source.read()
        text = raw.decode() if isinstance(raw, bytes) else raw
    elif isinstance(source, (str,)) and "\n" in source:
        text = source
    else:
        with open(source, newline="") as f:
            text = f.read()

    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)

    reader = csv.DictReader(io.StringIO(text))
    records: list[RunRecord] = []
    n_total = n_rejected = 0
    for row in reader:
        n_total += 1
        try:
            records.append(_parse_row(row, cols))
        except (ParseError, KeyError, TypeError) as exc:
            n_rejected += 1
            log.debug("skipping row %d: %s", n_total, exc)
    if n_total == 0:
        raise ParseError("no data rows found")
    if n_rejected > MAX_REJECT_FRACTION * n_total:
        raise ParseError(f"{n_rejected}/{n_total} rows rejected; input looks malformed")
    return ParseResult(records=records, n_total=n_total, n_rejected=n_rejected)


def _parse_row(row: dict, cols: dict) -> RunRecord:
    day = _parse_date(row[cols["date"]])
    sched_arr = _parse_clock(row[cols["sched_arr"]], day)
    sched_dep = _parse_clock(row[cols["sched_dep"]], day)
    act_arr_clock = _parse_clock(row[cols["act_arr"]], day)
    act_dep_clock = _parse_clock(row[cols["act_dep"]], day)
    arr_delay = _parse_delay(row[cols["arr_delay"]])
    dep_delay = _parse_delay(row[cols["dep_delay"]])

    # Overnight schedules: a departure clock earlier than the arrival clock
    # belongs to the next day.
    if sched_arr is not None and sched_dep is not None and sched_dep < sched_arr:
        sched_dep += timedelta(days=1)
        if act_dep_clock is not None:
            act_dep_clock += timedelta(days=1)

    act_arr, arr_delay = _resolve_actual(sched_arr, act_arr_clock, arr_delay)
    act_dep, dep_delay = _resolve_actual(sched_dep, act_dep_clock, dep_delay)

    return RunRecord(
        date=day,
        train_no=str(row[cols["train_no"]]).strip(),
        train_name=str(row.get(cols["train_name"], "")).strip(),
        station_code=str(row[cols["station_code"]]).strip(),
        distance_km=_parse_distance(row[cols["distance"]]),
        sched_arr=sched_arr,
        act_arr=act_arr,
        sched_dep=sched_dep,
        act_dep=act_dep,
        arr_delay_min=arr_delay,
        dep_delay_min=dep_delay,
    )


def hourly_headway(arrivals_h: list[float], default: float = DEFAULT_HEADWAY_HOURS) -> float:
    """Mean gap (hours) between consecutive arrival times within one slot.

    `arrivals_h` are sorted arrival times in hours. Slots with fewer than
    two arrivals carry no congestion signal and get the default.
    """
    if len(arrivals_h) < 2:
        return default
    gaps = [b - a for a, b in zip(arrivals_h, arrivals_h[1:])]
    return sum(gaps) / len(gaps)


def hourly_features(records, graph: RailGraph, t_start: datetime, hours: int,
                    headway_source: str = "actual",
                    headway_default: float = DEFAULT_HEADWAY_HOURS) -> FeatureCube:
    """Aggregate records into an hourly FeatureCube over [t_start, t_start+hours).

    Arrival channels key on the actual arrival slot, departure channels on
    the actual departure slot. Negative (early) delays are clamped to zero
    before aggregation. Events outside the time range are ignored.
    `headway_source` picks actual vs scheduled arrival times for the
    headway feature.
    """
    if hours < 1:
        raise ValueError("need at least one hour slot")
    if headway_source not in ("actual", "scheduled"):
        raise ValueError("headway_source must be 'actual' or 'scheduled'")
    n = graph.n_stations
    code_to_idx = {s.code: s.index for s in graph.stations}

    arr_sum = np.zeros((n, hours))
    arr_cnt = np.zeros((n, hours))
    dep_sum = np.zeros((n, hours))
    dep_cnt = np.zeros((n, hours))
    headway_times: dict[tuple[int, int], list[float]] = {}

    span = timedelta(hours=hours)
    for rec in records:
        if rec.station_code not in code_to_idx:
            raise ValueError(f"record references unknown station {rec.station_code!r}")
        i = code_to_idx[rec.station_code]
        if rec.act_arr is not None and t_start <= rec.act_arr < t_start + span:
            t = int((rec.act_arr - t_start) // timedelta(hours=1))
            delay_h = max(rec.arr_delay_min or 0, 0) / 60.0
            arr_sum[i, t] += delay_h
            arr_cnt[i, t] += 1.0
            hw_time = rec.act_arr if headway_source == "actual" else rec.sched_arr
            if hw_time is not None:
                headway_times.setdefault((i, t), []).append(
                    (hw_time - t_start).total_seconds() / 3600.0)
        if rec.act_dep is not None and t_start <= rec.act_dep < t_start + span:
            t = int((rec.act_dep - t_start) // timedelta(hours=1))
            delay_h = max(rec.dep_delay_min or 0, 0) / 60.0
            dep_sum[i, t] += delay_h
            dep_cnt[i, t] += 1.0

    X = np.zeros((n, N_FEATURES, hours))
    mask = (arr_cnt > 0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        X[:, 0, :] = np.where(arr_cnt > 0, arr_sum / np.maximum(arr_cnt, 1.0), 0.0)
        X[:, 1, :] = np.where(dep_cnt > 0, dep_sum / np.maximum(dep_cnt, 1.0), 0.0)
    X[:, 2, :] = arr_sum
    X[:, 3, :] = dep_sum
    X[:, 4, :] = headway_default
    for (i, t), times in headway_times.items():
        X[i, 4, t] = hourly_headway(sorted(times), default=headway_default)

    return FeatureCube(X=X, Y=X[:, 0, :].copy(), mask=mask, t_start=t_start)


@dataclass
class CubeStats:
    masked_mean_min: float
    masked_median_min: float
    masked_max_min: float
    mask_density: float
    per_zone_mean_min: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "masked_mean_min": self.masked_mean_min,
            "masked_median_min": self.masked_median_min,
            "masked_max_min": self.masked_max_min,
            "mask_density": self.mask_density,
            "per_zone_mean_min": self.per_zone_mean_min,
        }


def cube_stats(cube: FeatureCube, graph: RailGraph | None = None) -> CubeStats:
    """Masked summary of the target channel, reported in minutes."""
    on = cube.mask > 0
    if on.any():
        vals_min = cube.Y[on] * 60.0
        mean, median, peak = float(vals_min.mean()), float(np.median(vals_min)), float(vals_min.max())
    else:
        mean = median = peak = 0.0
    per_zone = {}
    if graph is not None:
        zones = graph.zones()
        for zone in sorted(set(zones)):
            zone_on = on[zones == zone]
            zone_vals = cube.Y[zones == zone][zone_on]
            per_zone[zone] = float(zone_vals.mean() * 60.0) if zone_on.any() else 0.0
    return CubeStats(
        masked_mean_min=mean,
        masked_median_min=median,
        masked_max_min=peak,
        mask_density=float(cube.mask.mean()),
        per_zone_mean_min=per_zone,
    )


_CUBE_MAGIC = b"RDCUBE1\n"


def save_cube(cube: FeatureCube, path) -> None:
    """Binary layout: magic, int64 N/F/T/t_start-epoch-seconds, then
    row-major float64 X and Y and uint8 mask. A JSON sidecar at
    `<path>.json` names the channels and units."""
    n, f, t = cube.X.shape
    # Naive-datetime epoch, independent of the host timezone.
    epoch = int((cube.t_start - datetime(1970, 1, 1)).total_seconds())
    with open(path, "wb") as fh:
        fh.write(_CUBE_MAGIC)
        np.array([n, f, t, epoch], dtype="<i8").tofile(fh)
        cube.X.astype("<f8").tofile(fh)
        cube.Y.astype("<f8").tofile(fh)
        cube.mask.astype(np.uint8).tofile(fh)
    sidecar = {
        "n_stations": n,
        "n_features": f,
        "n_slots": t,
        "t_start": cube.t_start.isoformat(),
        "slot_hours": SLOT_HOURS,
        "channels": list(CHANNELS),
        "units": "hours",
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")


def load_cube(path) -> FeatureCube:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CUBE_MAGIC))
        if magic != _CUBE_MAGIC:
            raise ValueError(f"{path}: not a feature-cube file")
        n, f, t, epoch = np.fromfile(fh, dtype="<i8", count=4)
        X = np.fromfile(fh, dtype="<f8", count=n * f * t).reshape(n, f, t)
        Y = np.fromfile(fh, dtype="<f8", count=n * t).reshape(n, t)
        mask = np.fromfile(fh, dtype=np.uint8, count=n * t).reshape(n, t).astype(np.float64)
    t_start = datetime(1970, 1, 1) + timedelta(seconds=int(epoch))
    return FeatureCube(X=X, Y=Y, mask=mask, t_start=t_start)
