"""Flight telemetry: loading, windowing, rule-based labeling, splitting, scaling.

On-disk formats
---------------
Flight CSV        header ``t,r,x,y,z``, one row per timestep, UTF-8.
Obstacle sidecar  ``<flight>.obstacles.csv`` next to the flight file, header
                  ``shape,cx,cy,cz,p1,p2,p3``; shape is ``sphere`` (p1 =
                  radius) or ``box`` (p1..p3 = half-extents). A missing
                  sidecar means the flight has no obstacles.
Window CSV        header ``window_id,safety,uncertainty,c0..c99``; the 25x4
                  window matrix is flattened row-major (c0..c3 = timestep 0
                  in channel order r,x,y,z).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ParseError

CHANNELS = ("r", "x", "y", "z")
N_CHANNELS = 4
WINDOW_LEN = 25

FLIGHT_HEADER = ["t", "r", "x", "y", "z"]
OBSTACLE_HEADER = ["shape", "cx", "cy", "cz", "p1", "p2", "p3"]
WINDOW_HEADER = ["window_id", "safety", "uncertainty"] + [
    f"c{i}" for i in range(WINDOW_LEN * N_CHANNELS)
]


@dataclass(frozen=True)
class TelemetrySample:
    """One telemetry record: timestep index, heading (rad), position (m)."""

    t: int
    r: float
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned static obstacle, ``sphere`` or ``box``.

    ``params`` holds (radius, 0, 0) for spheres and the three half-extents
    for boxes. Distances are signed: negative inside the obstacle.
    """

    shape: str
    center: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ContractError(f"unknown obstacle shape {self.shape!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.params))):
            raise ContractError("obstacle geometry must be finite")

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance from each point (n,3) to the obstacle surface."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        if self.shape == "sphere":
            return np.linalg.norm(p, axis=1) - self.params[0]
        q = np.abs(p) - self.params
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


@dataclass
class Flight:
    """One flight: ordered samples as a (T,4) matrix in channel order r,x,y,z."""

    flight_id: str
    t: np.ndarray
    values: np.ndarray
    obstacles: list[Obstacle] = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape != (len(self.t), N_CHANNELS):
            raise ContractError(
                f"flight {self.flight_id}: values must be (len(t), {N_CHANNELS})"
            )
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise ContractError(f"flight {self.flight_id}: timesteps not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ContractError(f"flight {self.flight_id}: non-finite sample values")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> list[TelemetrySample]:
        return [
            TelemetrySample(int(ti), *map(float, row))
            for ti, row in zip(self.t, self.values)
        ]


@dataclass
class Window:
    """Fixed-length telemetry segment; the unit of all learning.

    Labels are 0/1 once assigned, None while the window is unlabeled.
    """

    window_id: str
    values: np.ndarray
    safety_label: int | None = None
    uncertainty_label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (WINDOW_LEN, N_CHANNELS):
            raise ContractError(
                f"window {self.window_id}: values must be {WINDOW_LEN}x{N_CHANNELS}, "
                f"got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ContractError(f"window {self.window_id}: non-finite values")
        for name in ("safety_label", "uncertainty_label"):
            lab = getattr(self, name)
            if lab is not None and lab not in (0, 1):
                raise ContractError(f"window {self.window_id}: {name} must be 0 or 1")


@dataclass
class DatasetSplit:
    train: list[Window]
    validation: list[Window]
    test: list[Window]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population std, fit on training windows only.

    Zero-variance channels get std replaced by 1 so scaling is a no-op shift.
    """

    mean: np.ndarray
    std: np.ndarray


def wrap_angle(delta):
    """Wrap angle differences into (-pi, pi]."""
    delta = np.asarray(delta, dtype=float)
    wrapped = np.mod(delta + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def _parse_float(token: str, path, line_no: int, col: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(path, line_no, f"column {col!r}: cannot parse {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, line_no, f"column {col!r}: non-finite value {token!r}")
    return value


def _load_obstacles(path: Path) -> list[Obstacle]:
    obstacles = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != OBSTACLE_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(OBSTACLE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(OBSTACLE_HEADER):
                raise ParseError(path, line_no, f"expected {len(OBSTACLE_HEADER)} columns, got {len(row)}")
            shape = row[0].strip()
            if shape not in ("sphere", "box"):
                raise ParseError(path, line_no, f"unknown shape {shape!r}")
            nums = [_parse_float(tok, path, line_no, col) for tok, col in zip(row[1:], OBSTACLE_HEADER[1:])]
            obstacles.append(Obstacle(shape, np.array(nums[:3]), np.array(nums[3:])))
    return obstacles


def load_flight(path) -> Flight:
    """Load one flight CSV plus its obstacle sidecar (if present)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"flight file not found: {path}")
    ts, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLIGHT_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(FLIGHT_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FLIGHT_HEADER):
                raise ParseError(path, line_no, f"expected {len(FLIGHT_HEADER)} columns, got {len(row)}")
            try:
                ts.append(int(row[0]))
            except ValueError:
                raise ParseError(path, line_no, f"column 't': cannot parse {row[0]!r}") from None
            rows.append([_parse_float(tok, path, line_no, col) for tok, col in zip(row[1:], FLIGHT_HEADER[1:])])
    order = np.argsort(np.asarray(ts, dtype=np.int64), kind="stable")
    t_sorted = np.asarray(ts, dtype=np.int64)[order]
    if len(t_sorted) > 1 and np.any(np.diff(t_sorted) == 0):
        raise ParseError(path, 0, "duplicate timestep index")
    values = np.asarray(rows, dtype=np.float64).reshape(len(ts), N_CHANNELS)[order]
    sidecar = path.parent / (path.stem + ".obstacles.csv")
    obstacles = _load_obstacles(sidecar) if sidecar.is_file() else []
    return Flight(path.stem, t_sorted, values, obstacles)


def load_flights(path) -> list[Flight]:
    """Load every flight CSV in a directory, sorted by filename."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"flight directory not found: {root}")
    files = sorted(
        p for p in root.iterdir()
        if p.suffix == ".csv" and not p.name.endswith(".obstacles.csv")
    )
    return [load_flight(p) for p in files]


def save_flight(directory, flight: Flight) -> Path:
    """Write a flight CSV and obstacle sidecar; returns the flight path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{flight.flight_id}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FLIGHT_HEADER)
        for ti, row in zip(flight.t, flight.values):
            writer.writerow([int(ti)] + [repr(float(v)) for v in row])
    if flight.obstacles:
        with open(directory / f"{flight.flight_id}.obstacles.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(OBSTACLE_HEADER)
            for ob in flight.obstacles:
                writer.writerow(
                    [ob.shape]
                    + [repr(float(v)) for v in ob.center]
                    + [repr(float(v)) for v in ob.params]
                )
    return path


def window_flight(flight: Flight, n: int = WINDOW_LEN, stride: int | None = None) -> list[Window]:
    """Cut a flight into consecutive fixed-length windows (unlabeled).

    Windows are the segments [k*stride, k*stride+n) that lie fully inside the
    flight; a trailing partial segment is dropped. A flight shorter than ``n``
    yields no windows.
    """
    if n < 1 or (stride is not None and stride < 1):
        raise ContractError("window length and stride must be >= 1")
    if stride is None:
        stride = n
    out = []
    k = 0
    while k + n <= len(flight):
        out.append(
            Window(
                window_id=f"{flight.flight_id}:{k:05d}",
                values=flight.values[k : k + n].copy(),
            )
        )
        k += stride
    return out


def label_safety(values: np.ndarray, obstacles: list[Obstacle], threshold_m: float = 1.5) -> int:
    """1 iff any timestep comes strictly closer than ``threshold_m`` to an obstacle.

    Distance is the signed distance to the nearest obstacle surface, so points
    inside an obstacle count as unsafe. No obstacles means safe.
    """
    if not obstacles:
        return 0
    points = np.asarray(values, dtype=float)[:, 1:4]
    dmin = np.inf
    for ob in obstacles:
        dmin = min(dmin, float(ob.surface_distance(points).min()))
    return int(dmin < threshold_m)


def min_obstacle_distance(values: np.ndarray, obstacles: list[Obstacle]) -> float:
    """Smallest signed surface distance over all timesteps and obstacles."""
    if not obstacles:
        return math.inf
    points = np.asarray(values, dtype=float)[:, 1:4]
    return min(float(ob.surface_distance(points).min()) for ob in obstacles)


def label_uncertainty(
    values: np.ndarray,
    heading_delta_rad: float = 0.3,
    min_reversals: int = 3,
) -> int:
    """1 iff the heading channel oscillates: per-step heading changes (wrapped
    to (-pi, pi]) contain at least ``min_reversals`` sign alternations whose
    magnitudes each exceed ``heading_delta_rad``.
    """
    if heading_delta_rad <= 0:
        raise ContractError("heading_delta_rad must be > 0")
    if min_reversals < 1:
        raise ContractError("min_reversals must be >= 1")
    heading = np.asarray(values, dtype=float)[:, 0]
    deltas = wrap_angle(np.diff(heading))
    large = deltas[np.abs(deltas) > heading_delta_rad]
    if len(large) < 2:
        return 0
    signs = np.sign(large)
    alternations = int(np.sum(signs[1:] != signs[:-1]))
    return int(alternations >= min_reversals)


def label_windows(
    windows: list[Window],
    obstacles: list[Obstacle],
    threshold_m: float = 1.5,
    heading_delta_rad: float = 0.3,
    min_reversals: int = 3,
) -> list[Window]:
    """Assign both rule labels to each window; returns new Window objects."""
    return [
        replace(
            w,
            safety_label=label_safety(w.values, obstacles, threshold_m),
            uncertainty_label=label_uncertainty(w.values, heading_delta_rad, min_reversals),
        )
        for w in windows
    ]


def split_sequential(windows: list[Window], ratios=(8, 1, 1)) -> DatasetSplit:
    """Split windows in their given order into train/validation/test.

    The first floor(n*r0/sum) windows become train, the next floor(n*r1/sum)
    validation, and the remainder test. Ordering is the caller's contract.
    """
    n = len(windows)
    if n < 3:
        raise ConfigError(f"need at least 3 windows to split, got {n}")
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    return DatasetSplit(
        train=list(windows[:n_train]),
        validation=list(windows[n_train : n_train + n_val]),
        test=list(windows[n_train + n_val :]),
    )


def fit_channel_stats(train: list[Window]) -> ChannelStats:
    """Per-channel mean/population-std over all timesteps of all train windows."""
    if not train:
        raise ConfigError("cannot fit channel stats on an empty training set")
    stacked = np.concatenate([w.values for w in train], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return ChannelStats(mean=mean, std=std)


def standardize(values: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """(values - mean) / std per channel."""
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def save_windows(path, windows: list[Window]) -> Path:
    """Write labeled windows to the flat window CSV format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(WINDOW_HEADER)
        for w in windows:
            if w.safety_label is None or w.uncertainty_label is None:
                raise ContractError(f"window {w.window_id} is unlabeled; cannot save")
            writer.writerow(
                [w.window_id, w.safety_label, w.uncertainty_label]
                + [repr(float(v)) for v in w.values.ravel()]
            )
    return path


def load_windows(path) -> list[Window]:
    """Read windows from the flat window CSV format."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"window file not found: {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WINDOW_HEADER:
            raise ParseError(path, 1, "bad window CSV header")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(WINDOW_HEADER):
                raise ParseError(path, line_no, f"expected {len(WINDOW_HEADER)} columns, got {len(row)}")
            try:
                safety = int(row[1])
                uncertainty = int(row[2])
            except ValueError:
                raise ParseError(path, line_no, "labels must be integers") from None
            values = np.array(
                [_parse_float(tok, path, line_no, f"c{i}") for i, tok in enumerate(row[3:])]
            ).reshape(WINDOW_LEN, N_CHANNELS)
            out.append(Window(row[0], values, safety, uncertainty))
    return out
