"""Synthetic propagation scene and ground-truth channel gain grids.

A scene is a rectangular map with axis-aligned rectangular buildings and a
single base station. The ground truth assigns every unobstructed grid cell
a channel gain in dB drawn from a log-distance path-loss law with separate
line-of-sight / non-line-of-sight exponents plus spatially correlated
shadow fading. Everything is deterministic given ``EnvironmentSpec.seed``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from .seeding import derive_seed
from ._validation import SAMPLE_COLUMNS, require_positive

DATASET_HEADER = list(SAMPLE_COLUMNS)


class InvalidSpecError(ValueError):
    """An environment spec field is missing, malformed, or inconsistent."""


class DatasetError(ValueError):
    """A dataset file cannot be parsed or violates the scene it belongs to."""


@dataclass(frozen=True)
class Building:
    """Axis-aligned rectangular footprint with a height in metres."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float

    def validate(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidSpecError(
                f"building footprint is degenerate: {self!r}"
            )
        if not self.height > 0:
            raise InvalidSpecError(f"building height must be positive: {self!r}")


@dataclass(frozen=True)
class PropagationParams:
    """Log-distance path loss with per-visibility-class shadow fading.

    ``pl0_db`` is the loss at 1 m. Distances below 1 m are floored to 1 m
    so the law stays finite at the base station. Shadow fading is a
    zero-mean Gaussian field whose spatial correlation falls off
    exponentially with ``shadow_corr_dist`` metres.
    """

    pl0_db: float = 40.0
    n_los: float = 2.0
    n_nlos: float = 3.5
    shadow_sigma_los_db: float = 4.0
    shadow_sigma_nlos_db: float = 8.0
    shadow_corr_dist: float = 25.0

    def validate(self) -> None:
        if self.shadow_sigma_los_db < 0 or self.shadow_sigma_nlos_db < 0:
            raise InvalidSpecError("shadow sigmas must be non-negative")
        require_positive("shadow_corr_dist", self.shadow_corr_dist)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Complete description of a synthetic scene.

    ``bs_position`` is (x, y, z) in metres; ``carrier_frequency`` is in MHz
    and ``bs_power`` in watts (both recorded for provenance, the gain law
    itself is anchored by ``propagation.pl0_db``). ``seed`` drives the
    shadow-fading realization.
    """

    width: float = 470.0
    height: float = 630.0
    grid_step: float = 1.0
    bs_position: tuple[float, float, float] = (120.0, 540.0, 164.0)
    bs_power: float = 1.0
    carrier_frequency: float = 4800.0
    sample_height: float = 1.5
    buildings: tuple[Building, ...] = ()
    propagation: PropagationParams = field(default_factory=PropagationParams)
    seed: int = 0

    def validate(self) -> None:
        require_positive("width", self.width)
        require_positive("height", self.height)
        require_positive("grid_step", self.grid_step)
        require_positive("bs_power", self.bs_power)
        require_positive("carrier_frequency", self.carrier_frequency)
        if len(self.bs_position) != 3:
            raise InvalidSpecError("bs_position must be (x, y, z)")
        bx, by, _ = self.bs_position
        if not (0 <= bx <= self.width and 0 <= by <= self.height):
            raise InvalidSpecError(
                f"bs_position {self.bs_position} lies outside the map"
            )
        if self.sample_height < 0:
            raise InvalidSpecError("sample_height must be non-negative")
        if self.seed < 0:
            raise InvalidSpecError("seed must be non-negative")
        for b in self.buildings:
            b.validate()
        self.propagation.validate()


class Environment:
    """A validated spec plus the derived cell grid.

    Cells are indexed ``[ix, iy]`` with centers at ``((ix + 0.5) * step,
    (iy + 0.5) * step)``. A cell is blocked when its center falls strictly
    inside a building footprint.
    """

    def __init__(self, spec: EnvironmentSpec):
        spec.validate()
        self.spec = spec
        self.nx = math.ceil(spec.width / spec.grid_step)
        self.ny = math.ceil(spec.height / spec.grid_step)
        step = spec.grid_step
        self.cell_x = (np.arange(self.nx) + 0.5) * step
        self.cell_y = (np.arange(self.ny) + 0.5) * step
        cx, cy = np.meshgrid(self.cell_x, self.cell_y, indexing="ij")
        self._cx = cx
        self._cy = cy
        blocked = np.zeros((self.nx, self.ny), dtype=bool)
        for b in spec.buildings:
            inside = (
                (cx > b.x_min) & (cx < b.x_max) & (cy > b.y_min) & (cy < b.y_max)
            )
            blocked |= inside
        self.blocked = blocked

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays of cell-center coordinates, shape (nx, ny)."""
        return self._cx, self._cy

    def cell_of(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell indices containing the given coordinates (clamped at edges)."""
        step = self.spec.grid_step
        ix = np.clip((np.asarray(x) / step).astype(np.int64), 0, self.nx - 1)
        iy = np.clip((np.asarray(y) / step).astype(np.int64), 0, self.ny - 1)
        return ix, iy

    def in_bounds(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= 0) & (x <= self.spec.width) & (y >= 0) & (y <= self.spec.height)


def build_environment(spec: EnvironmentSpec) -> Environment:
    """Validate a spec and precompute its grid and blocked-cell mask."""
    return Environment(spec)


def _segment_hits_rect(bx, by, cx, cy, rect: Building) -> np.ndarray:
    # Liang-Barsky clipping of the segments (bx,by)->(cx,cy) against the
    # closed rectangle; vectorized over all segment endpoints at once.
    dx = cx - bx
    dy = cy - by
    t0 = np.zeros(cx.shape)
    t1 = np.ones(cx.shape)
    hit = np.ones(cx.shape, dtype=bool)
    edges = (
        (-dx, bx - rect.x_min),
        (dx, rect.x_max - bx),
        (-dy, by - rect.y_min),
        (dy, rect.y_max - by),
    )
    for p, q in edges:
        p = np.broadcast_to(np.asarray(p, dtype=float), cx.shape)
        q = np.broadcast_to(np.asarray(q, dtype=float), cx.shape)
        para = p == 0.0
        hit &= ~(para & (q < 0.0))
        safe_p = np.where(para, 1.0, p)
        t = q / safe_p
        t0 = np.where(~para & (p < 0.0), np.maximum(t0, t), t0)
        t1 = np.where(~para & (p > 0.0), np.minimum(t1, t), t1)
    return hit & (t0 <= t1)


def line_of_sight(env: Environment) -> np.ndarray:
    """Per-cell LoS mask: no building footprint crosses the BS-to-cell segment.

    The test is exact 2-D segment/rectangle intersection, so the result for
    a given cell center does not depend on the grid resolution.
    """
    bx, by, _ = env.spec.bs_position
    cx, cy = env.cell_centers()
    los = np.ones(env.grid_shape, dtype=bool)
    for b in env.spec.buildings:
        los &= ~_segment_hits_rect(bx, by, cx, cy, b)
    return los


def _shadow_field(env: Environment, los: np.ndarray) -> np.ndarray:
    """Correlated shadow fading in dB, exactly zero-mean over usable cells."""
    prop = env.spec.propagation
    s_los = prop.shadow_sigma_los_db
    s_nlos = prop.shadow_sigma_nlos_db
    if s_los == 0.0 and s_nlos == 0.0:
        return np.zeros(env.grid_shape)
    step = env.spec.grid_step
    radius = int(math.ceil(3.0 * prop.shadow_corr_dist / step))
    ax = np.arange(-radius, radius + 1) * step
    kx, ky = np.meshgrid(ax, ax, indexing="ij")
    kernel = np.exp(-np.hypot(kx, ky) / prop.shadow_corr_dist)
    rng = np.random.default_rng(derive_seed(env.spec.seed, "shadow-field"))
    white = rng.standard_normal((env.nx + 2 * radius, env.ny + 2 * radius))
    # Padding the white noise keeps the full kernel support inside the
    # convolution, so every cell has identical variance before scaling.
    smooth = fftconvolve(white, kernel, mode="valid")
    smooth /= math.sqrt(np.sum(kernel * kernel))
    sigma = np.where(los, s_los, s_nlos)
    shadow = smooth * sigma
    usable = ~env.blocked
    if usable.any():
        shadow -= shadow[usable].mean()
    return shadow


@dataclass
class GroundTruthMap:
    """Dense gains over the scene grid. Blocked cells hold NaN."""

    env: Environment
    gains_db: np.ndarray
    blocked: np.ndarray
    los: np.ndarray

    def unblocked_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays (ix, iy) of all usable cells, in row-major order."""
        return np.nonzero(~self.blocked)

    def sample_array(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        """Assemble (M, 5) sample rows for the given cell indices."""
        bx, by, _ = self.env.spec.bs_position
        m = len(ix)
        out = np.empty((m, 5))
        out[:, 0] = bx
        out[:, 1] = by
        out[:, 2] = self.env.cell_x[ix]
        out[:, 3] = self.env.cell_y[iy]
        out[:, 4] = self.gains_db[ix, iy]
        return out


def compute_ground_truth(env: Environment) -> GroundTruthMap:
    """Realize the gain law over the grid.

    gain(g) = -(pl0 + 10 n(g) log10(max(d, 1m)) + X(g)) where n switches on
    line of sight and X is the correlated shadow field. d is the 3-D
    distance from the BS antenna to the cell center at sample height.
    """
    spec = env.spec
    prop = spec.propagation
    bx, by, bz = spec.bs_position
    cx, cy = env.cell_centers()
    dz = bz - spec.sample_height
    dist = np.sqrt((cx - bx) ** 2 + (cy - by) ** 2 + dz * dz)
    np.maximum(dist, 1.0, out=dist)
    los = line_of_sight(env)
    n_exp = np.where(los, prop.n_los, prop.n_nlos)
    shadow = _shadow_field(env, los)
    gains = -(prop.pl0_db + 10.0 * n_exp * np.log10(dist) + shadow)
    gains[env.blocked] = np.nan
    return GroundTruthMap(env=env, gains_db=gains, blocked=env.blocked.copy(), los=los)


def random_buildings(
    count: int,
    width: float,
    height: float,
    seed: int,
    size_range: tuple[float, float] = (10.0, 40.0),
    height_range: tuple[float, float] = (6.0, 30.0),
    keep_clear: tuple[float, float] | None = None,
    clear_radius: float = 8.0,
) -> tuple[Building, ...]:
    """Draw non-degenerate rectangular buildings uniformly over the map.

    ``keep_clear`` excludes footprints overlapping a disc around a point
    (normally the base station) so the BS never ends up indoors.
    """
    rng = np.random.default_rng(seed)
    out: list[Building] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200 * max(count, 1):
            raise InvalidSpecError(
                f"could not place {count} buildings on a {width}x{height} map"
            )
        w = rng.uniform(*size_range)
        h = rng.uniform(*size_range)
        x0 = rng.uniform(0, max(width - w, 1e-9))
        y0 = rng.uniform(0, max(height - h, 1e-9))
        b = Building(x0, y0, x0 + w, y0 + h, rng.uniform(*height_range))
        if keep_clear is not None:
            px, py = keep_clear
            nearest_x = min(max(px, b.x_min), b.x_max)
            nearest_y = min(max(py, b.y_min), b.y_max)
            if math.hypot(px - nearest_x, py - nearest_y) < clear_radius:
                continue
        out.append(b)
    return tuple(out)


def scene_with_buildings(spec: EnvironmentSpec, n_buildings: int, seed: int) -> EnvironmentSpec:
    """Convenience: same spec with randomly placed buildings that avoid the BS."""
    bx, by, _ = spec.bs_position
    bldgs = random_buildings(
        n_buildings, spec.width, spec.height, seed, keep_clear=(bx, by)
    )
    return replace(spec, buildings=bldgs)


def write_dataset(samples: np.ndarray, path) -> None:
    """Write sample rows as CSV with the canonical header.

    Floats are written with ``repr`` so a round trip through the file
    reproduces the array bit for bit.
    """
    samples = np.asarray(samples, dtype=np.float64)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])


def ingest_dataset(path, env: Environment | None = None) -> np.ndarray:
    """Load a sample CSV, optionally validating rows against a scene.

    With ``env`` given, any row outside the map or at a blocked cell is an
    error (reported with its 1-based line number), as is any malformed or
    non-numeric field. An empty file or a file with only a header is also
    an error.
    """
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: file is empty") from None
        if [h.strip() for h in header] != DATASET_HEADER:
            raise DatasetError(
                f"{path}: expected header {','.join(DATASET_HEADER)}, "
                f"got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DATASET_HEADER):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(DATASET_HEADER)} fields, "
                    f"got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DatasetError(
                    f"{path}:{lineno}: non-numeric field in {row!r}"
                ) from None
    if not rows:
        raise DatasetError(f"{path}: dataset has no sample rows")
    samples = np.asarray(rows, dtype=np.float64)
    if env is not None:
        ok = env.in_bounds(samples[:, 2], samples[:, 3])
        if not ok.all():
            bad = int(np.nonzero(~ok)[0][0])
            raise DatasetError(
                f"{path}:{bad + 2}: location "
                f"({samples[bad, 2]}, {samples[bad, 3]}) is outside the map"
            )
        ix, iy = env.cell_of(samples[:, 2], samples[:, 3])
        hits = env.blocked[ix, iy]
        if hits.any():
            bad = int(np.nonzero(hits)[0][0])
            raise DatasetError(
                f"{path}:{bad + 2}: location "
                f"({samples[bad, 2]}, {samples[bad, 3]}) falls on a blocked cell"
            )
    return samples
