"""Deterministic synthetic flight generator for desk-scale benchmarks.

Flights are smooth waypoint cruises with additive noise. Most flights carry
one "event" segment (two windows long) where the trajectory swerves a couple
of meters sideways; an obstacle sits along the swerve direction either well
clear of the path (far) or inside the safety threshold (near). The heading
channel during the event follows one of three styles:

  calm    no heading pattern (certain)
  wiggle  alternating heading steps below the uncertainty rule threshold
  osc     alternating heading steps well above it (uncertain)

Style and obstacle distance are sampled independently, so a near pass looks
exactly like a far pass in the telemetry itself; safety is only predictable
through its correlation with the heading behavior. Window labels are always
assigned by the rule-based labelers in :mod:`safebal.telemetry`, never taken
from generator intent; the report counts any intent/rule mismatches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nncore import Rng, derive_seed
from .telemetry import (
    ChannelStats,
    DatasetSplit,
    Flight,
    Obstacle,
    Window,
    fit_channel_stats,
    label_windows,
    load_windows,
    save_flight,
    save_windows,
    split_sequential,
    window_flight,
)

DEFAULT_SEED = 20250809


@dataclass
class GenConfig:
    n_flights: int = 200
    flight_len: int = 250
    window_len: int = 25
    imbalance_ratio: float = 46.0
    # flight-count mix over the four behavior archetypes:
    # (certain-safe, uncertain-safe, certain-unsafe, uncertain-unsafe)
    archetype_weights: tuple = (0.795, 0.10, 0.025, 0.08)
    wiggle_safe_frac: float = 0.28    # of certain-safe flights: wiggle-textured far pass
    decoy_safe_frac: float = 0.19     # of certain-safe flights: calm far pass
    wiggle_unsafe_frac: float = 0.6   # of certain-unsafe flights: wiggle vs calm
    pos_noise: float = 0.05
    heading_noise: float = 0.015
    osc_delta: tuple = (0.65, 1.05)
    wiggle_delta: tuple = (0.10, 0.22)
    near_distance: tuple = (0.6, 1.1)
    far_distance: tuple = (2.9, 6.0)
    bump_amplitude: float = 2.0
    event_windows: int = 2
    n_decoy_obstacles: int = 2
    safety_threshold_m: float = 1.5
    heading_delta_rad: float = 0.3
    min_reversals: int = 3
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.imbalance_ratio < 1:
            raise ConfigError("imbalance_ratio must be >= 1")
        if len(self.archetype_weights) != 4 or min(self.archetype_weights) < 0:
            raise ConfigError("archetype_weights must be 4 non-negative numbers")
        if sum(self.archetype_weights) <= 0:
            raise ConfigError("archetype_weights must not all be zero")
        if self.flight_len < self.window_len * (self.event_windows + 2):
            raise ConfigError("flights too short for an interior event segment")
        for frac in (self.wiggle_safe_frac, self.decoy_safe_frac, self.wiggle_unsafe_frac):
            if not 0.0 <= frac <= 1.0:
                raise ConfigError("mix fractions must be in [0, 1]")

    @property
    def windows_per_flight(self) -> int:
        return self.flight_len // self.window_len


@dataclass
class GenReport:
    cells: dict
    realized_ratio: float
    seed: int
    intent_mismatches: int
    n_flights: int
    n_windows: int
    kind_counts: dict

    def lines(self) -> list[str]:
        out = [
            f"seed = {self.seed}",
            f"n_flights = {self.n_flights}",
            f"n_windows = {self.n_windows}",
            f"realized_safe_to_unsafe_ratio = {self.realized_ratio!r}",
            f"intent_mismatches = {self.intent_mismatches}",
        ]
        names = {(0, 0): "safe_certain", (0, 1): "safe_uncertain",
                 (1, 0): "unsafe_certain", (1, 1): "unsafe_uncertain"}
        for key, name in names.items():
            out.append(f"windows_{name} = {self.cells.get(key, 0)}")
        for kind, count in sorted(self.kind_counts.items()):
            out.append(f"flights_{kind} = {count}")
        return out


# flight kinds: (heading style, obstacle placement)
_KIND_ORDER = [
    ("calm", "none"), ("calm", "far"), ("wiggle", "far"), ("osc", "far"),
    ("calm", "near"), ("wiggle", "near"), ("osc", "near"),
]


def _kind_counts(config: GenConfig) -> dict:
    total_windows = config.n_flights * config.windows_per_flight
    target_unsafe = total_windows / (config.imbalance_ratio + 1.0)
    n_unsafe = int(round(target_unsafe / config.event_windows))
    if n_unsafe < 1 or n_unsafe > config.n_flights // 2:
        raise ConfigError(
            f"imbalance ratio {config.imbalance_ratio} infeasible for "
            f"{config.n_flights} flights of {config.windows_per_flight} windows"
        )
    wa, wb, wc, wd = config.archetype_weights
    if wc + wd <= 0:
        raise ConfigError("unsafe archetype weights are both zero but unsafe flights are required")
    n_c = int(round(n_unsafe * wc / (wc + wd)))
    n_d = n_unsafe - n_c
    n_safe = config.n_flights - n_unsafe
    n_b = int(round(n_safe * wb / (wa + wb))) if wa + wb > 0 else 0
    n_a = n_safe - n_b
    n_wiggle = int(round(n_a * config.wiggle_safe_frac))
    n_decoy = int(round(n_a * config.decoy_safe_frac))
    n_plain = n_a - n_wiggle - n_decoy
    if n_plain < 0:
        raise ConfigError("wiggle_safe_frac + decoy_safe_frac exceed 1")
    n_c_wiggle = int(round(n_c * config.wiggle_unsafe_frac))
    counts = {
        ("calm", "none"): n_plain,
        ("calm", "far"): n_decoy,
        ("wiggle", "far"): n_wiggle,
        ("osc", "far"): n_b,
        ("calm", "near"): n_c - n_c_wiggle,
        ("wiggle", "near"): n_c_wiggle,
        ("osc", "near"): n_d,
    }
    return counts


_BOX_AXES = [
    np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]),
    np.array([0, 1.0, 0]), np.array([0, -1.0, 0]),
    np.array([0, 0, 1.0]), np.array([0, 0, -1.0]),
]


def _make_obstacle(rng: Rng, anchor, direction, gap: float, shape: str) -> Obstacle:
    """Obstacle whose surface sits ``gap`` meters from ``anchor`` along ``direction``.

    The gap is exact for spheres with any direction and for boxes approached
    along a coordinate axis; callers must pair boxes with axis directions.
    """
    if shape == "sphere":
        radius = float(rng.uniform(0.5, 2.0))
        center = anchor + direction * (gap + radius)
        return Obstacle("sphere", center, np.array([radius, 0.0, 0.0]))
    half = rng.uniform(0.5, 2.0, 3)
    axis = int(np.argmax(np.abs(direction)))
    center = anchor + direction * (gap + half[axis])
    return Obstacle("box", center, half)


def _generate_flight(index: int, style: str, placement: str, config: GenConfig) -> tuple[Flight, dict]:
    rng = Rng(derive_seed(config.seed, f"flight:{index:05d}"))
    n = config.flight_len
    wlen = config.window_len
    nw = config.windows_per_flight

    # base headings concentrated near 0 so the per-channel global std stays
    # small and event heading patterns remain salient after standardization
    heading0 = float(rng.normal(0.0, 0.35))
    turn_rate = float(rng.uniform(-0.001, 0.001))
    speed = float(rng.uniform(0.6, 1.2))
    base_heading = heading0 + turn_rate * np.arange(n)
    steps = np.stack([speed * np.cos(base_heading), speed * np.sin(base_heading)], axis=1)
    start_xy = rng.uniform(-40.0, 40.0, 2)
    xy = start_xy + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)[:-1]])
    z0 = float(rng.uniform(8.0, 30.0))
    z_cycles = float(rng.uniform(0.5, 2.0))
    z_phase = float(rng.uniform(0.0, 2 * math.pi))
    z = z0 + 0.8 * np.sin(2 * math.pi * z_cycles * np.arange(n) / n + z_phase)
    positions = np.column_stack([xy, z])
    heading = base_heading.copy()

    obstacles: list[Obstacle] = []
    intent = {
        "event_window": None,
        "unsafe_windows": set(),
        "uncertain_windows": set(),
    }
    if not (style == "calm" and placement == "none"):
        event_w = int(rng.integers(1, nw - config.event_windows))
        e0 = event_w * wlen
        L = config.event_windows * wlen
        # trapezoid envelope: smooth 10-sample ramps, flat top, so every
        # event window carries full-amplitude pattern for most of its span
        ramp = 10
        env = np.ones(L)
        env[:ramp] = 0.5 * (1.0 - np.cos(math.pi * np.arange(ramp) / ramp))
        env[-ramp:] = env[:ramp][::-1]
        peak = e0 + L // 2
        head_pk = base_heading[peak]
        path_dir = np.array([math.cos(head_pk), math.sin(head_pk), 0.0])
        lateral = np.array([-math.sin(head_pk), math.cos(head_pk), 0.0])

        if placement == "near":
            gap = float(rng.uniform(*config.near_distance))
        else:
            gap = float(rng.uniform(*config.far_distance))

        main = None
        shape = "sphere" if rng.uniform() < 0.7 else "box"
        for _ in range(30):
            if shape == "sphere":
                phi = float(rng.uniform(0.0, 2 * math.pi))
                direction = math.cos(phi) * lateral + math.sin(phi) * np.array([0.0, 0.0, 1.0])
            else:
                cands = [a for a in _BOX_AXES if abs(float(np.dot(a, path_dir))) < 0.7]
                direction = cands[int(rng.integers(len(cands)))]
            anchor = positions[peak] + direction * config.bump_amplitude
            candidate = _make_obstacle(rng, anchor, direction, gap, shape)
            extent = candidate.params[0] if candidate.shape == "sphere" else float(candidate.params.max())
            if candidate.center[2] - extent < 0.3:
                continue  # would poke through the ground
            outside = np.concatenate([positions[: max(e0 - 5, 0)], positions[min(e0 + L + 5, n):]])
            if len(outside) and float(candidate.surface_distance(outside).min()) < 2.0:
                continue  # path curls back too close outside the event
            main = candidate
            break
        if main is None:
            raise ConfigError(f"flight {index}: could not place obstacle (seed {config.seed})")
        obstacles.append(main)

        positions[e0 : e0 + L] += direction * (config.bump_amplitude * env)[:, None]
        if style in ("wiggle", "osc"):
            lo, hi = config.osc_delta if style == "osc" else config.wiggle_delta
            delta = float(rng.uniform(lo, hi))
            alternating = np.where(np.arange(L) % 2 == 0, 1.0, -1.0)
            heading[e0 : e0 + L] += 0.5 * delta * env * alternating
            weave = 0.3 * delta / 0.5
            positions[e0 : e0 + L] += lateral * (weave * env * alternating)[:, None]
        event_windows = set(range(event_w, event_w + config.event_windows))
        intent["event_window"] = event_w
        if placement == "near":
            intent["unsafe_windows"] = event_windows
        if style == "osc":
            intent["uncertain_windows"] = event_windows

    for _ in range(config.n_decoy_obstacles):
        for _ in range(8):
            at = positions[int(rng.integers(n))]
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            decoy_shape = "sphere" if rng.uniform() < 0.7 else "box"
            decoy = _make_obstacle(rng, at, direction, float(rng.uniform(4.0, 12.0)), decoy_shape)
            extent = decoy.params[0] if decoy.shape == "sphere" else float(decoy.params.max())
            if decoy.center[2] - extent < 0.3:
                continue
            if float(decoy.surface_distance(positions).min()) < 2.5:
                continue
            obstacles.append(decoy)
            break

    positions += rng.normal(0.0, config.pos_noise, (n, 3))
    heading += rng.normal(0.0, config.heading_noise, n)
    values = np.column_stack([heading, positions])
    flight = Flight(f"flight_{index:04d}", np.arange(n), values, obstacles)
    return flight, intent


def generate(config: GenConfig) -> tuple[list[Flight], GenReport]:
    """Generate flights and report realized (rule-assigned) label counts."""
    counts = _kind_counts(config)
    kinds = []
    for kind in _KIND_ORDER:
        kinds.extend([kind] * counts[kind])
    assign_rng = Rng(derive_seed(config.seed, "assignment"))
    assign_rng.shuffle(kinds)

    flights = []
    cells = {(0, 0): 0, (0, 1): 0, (1, 0): 0, (1, 1): 0}
    mismatches = 0
    for index, (style, placement) in enumerate(kinds):
        flight, intent = _generate_flight(index, style, placement, config)
        flights.append(flight)
        windows = label_windows(
            window_flight(flight, config.window_len, config.window_len),
            flight.obstacles,
            config.safety_threshold_m,
            config.heading_delta_rad,
            config.min_reversals,
        )
        for wi, window in enumerate(windows):
            cells[(window.safety_label, window.uncertainty_label)] += 1
            wanted = (
                int(wi in intent["unsafe_windows"]),
                int(wi in intent["uncertain_windows"]),
            )
            if wanted != (window.safety_label, window.uncertainty_label):
                mismatches += 1
    unsafe = cells[(1, 0)] + cells[(1, 1)]
    safe = cells[(0, 0)] + cells[(0, 1)]
    report = GenReport(
        cells=cells,
        realized_ratio=safe / unsafe if unsafe else math.inf,
        seed=config.seed,
        intent_mismatches=mismatches,
        n_flights=len(flights),
        n_windows=safe + unsafe,
        kind_counts={f"{s}_{p}": c for (s, p), c in counts.items()},
    )
    return flights, report


@dataclass
class BenchmarkPaths:
    root: Path
    flights_dir: Path
    windows_csv: Path
    split_csv: Path
    stats_csv: Path
    manifest: Path


def benchmark_paths(root) -> BenchmarkPaths:
    root = Path(root)
    return BenchmarkPaths(
        root=root,
        flights_dir=root / "flights",
        windows_csv=root / "windows.csv",
        split_csv=root / "split.csv",
        stats_csv=root / "channel_stats.csv",
        manifest=root / "gen_manifest.txt",
    )


def make_benchmark(config: GenConfig, out_dir, force: bool = False) -> tuple[BenchmarkPaths, GenReport]:
    """Generate, window, label, split, and persist a full dataset bundle."""
    paths = benchmark_paths(out_dir)
    if paths.root.exists() and any(paths.root.iterdir()) and not force:
        raise ConfigError(f"output directory {paths.root} is not empty; pass force to overwrite")
    paths.root.mkdir(parents=True, exist_ok=True)
    flights, report = generate(config)
    windows: list[Window] = []
    for flight in flights:
        save_flight(paths.flights_dir, flight)
        windows.extend(
            label_windows(
                window_flight(flight, config.window_len, config.window_len),
                flight.obstacles,
                config.safety_threshold_m,
                config.heading_delta_rad,
                config.min_reversals,
            )
        )
    split = split_sequential(windows)
    stats = fit_channel_stats(split.train)
    save_windows(paths.windows_csv, windows)
    with open(paths.split_csv, "w", encoding="utf-8") as fh:
        fh.write("window_id,split\n")
        for name, part in (("train", split.train), ("validation", split.validation), ("test", split.test)):
            for w in part:
                fh.write(f"{w.window_id},{name}\n")
    with open(paths.stats_csv, "w", encoding="utf-8") as fh:
        fh.write("channel,mean,std\n")
        for ch, m, s in zip(("r", "x", "y", "z"), stats.mean, stats.std):
            fh.write(f"{ch},{m!r},{s!r}\n")
    lines = ["format = safebal-benchmark-v1"]
    for f in fields(config):
        lines.append(f"gen.{f.name} = {getattr(config, f.name)!r}")
    lines.extend(report.lines())
    lines.append(f"split_sizes = {len(split.train)}/{len(split.validation)}/{len(split.test)}")
    paths.manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths, report


def load_benchmark(root) -> DatasetSplit:
    """Load a dataset bundle written by make_benchmark."""
    paths = benchmark_paths(root)
    windows = load_windows(paths.windows_csv)
    assignment = {}
    with open(paths.split_csv, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "window_id,split":
            raise ConfigError(f"bad split manifest {paths.split_csv}")
        for line in fh:
            wid, split_name = line.strip().rsplit(",", 1)
            assignment[wid] = split_name
    parts = {"train": [], "validation": [], "test": []}
    for w in windows:
        parts[assignment[w.window_id]].append(w)
    return DatasetSplit(train=parts["train"], validation=parts["validation"], test=parts["test"])


def load_channel_stats(root) -> ChannelStats:
    paths = benchmark_paths(root)
    means, stds = [], []
    with open(paths.stats_csv, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            _, m, s = line.strip().split(",")
            means.append(float(m))
            stds.append(float(s))
    return ChannelStats(mean=np.array(means), std=np.array(stds))
