"""On-disk formats: model bundles, partitions, grids, heatmaps.

All writers are deterministic: dict keys are sorted, floats are written
with ``repr`` (shortest round-tripping form), arrays are little-endian
float64, and nothing embeds a timestamp. Saving the same objects twice
produces identical bytes.

A model bundle is a directory::

    bundle/
      manifest.json     format version, architecture, hyperparameters, seeds
      partition.json    scaler ranges, centers, membership, sizes
      subnet_000.net    one binary per subregion network

Each ``.net`` file is a single JSON header line (format version,
architecture, target standardization, array layout) followed by the raw
little-endian float64 parameter vector.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .clustering import FeatureScaler, Partition
from .mapper import McnnModel, Subnet
from .network import Architecture, Hyperparameters, NetworkParams

FORMAT_VERSION = 1
_NET_MAGIC = "gainmap-subnet"


class VersionMismatchError(RuntimeError):
    pass


class CorruptBundleError(RuntimeError):
    pass


def _dump_json(obj, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _check_version(found, path) -> None:
    if found != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {found} is not supported by this build "
            f"(expected {FORMAT_VERSION}); regenerate the artifact or use a "
            f"matching package version"
        )


def save_partition(partition: Partition, path) -> None:
    _dump_json(
        {
            "format_version": FORMAT_VERSION,
            "k": int(partition.k),
            "scaler": {
                "min": partition.scaler.min_.tolist(),
                "max": partition.scaler.max_.tolist(),
            },
            "centers": partition.centers.tolist(),
            "membership": partition.membership.tolist(),
            "sizes": partition.sizes.tolist(),
            "objective": float(partition.objective),
        },
        path,
    )


def load_partition(path) -> Partition:
    doc = _load_json(path)
    _check_version(doc.get("format_version"), path)
    scaler = FeatureScaler(
        min_=np.asarray(doc["scaler"]["min"], dtype=np.float64),
        max_=np.asarray(doc["scaler"]["max"], dtype=np.float64),
    )
    return Partition(
        k=int(doc["k"]),
        centers=np.asarray(doc["centers"], dtype=np.float64),
        membership=np.asarray(doc["membership"], dtype=np.int64),
        scaler=scaler,
        sizes=np.asarray(doc["sizes"], dtype=np.int64),
        objective=float(doc.get("objective", float("nan"))),
    )


def _save_subnet(subnet: Subnet, path) -> None:
    arch = subnet.params.arch
    header = {
        "magic": _NET_MAGIC,
        "format_version": FORMAT_VERSION,
        "architecture": asdict(arch),
        "dtype": "<f8",
        "param_count": arch.param_count(),
        "target_mean": subnet.target_mean,
        "target_std": subnet.target_std,
        "target_constant": subnet.target_constant,
    }
    blob = subnet.params.flat.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(blob)


def _load_subnet(path) -> Subnet:
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError:
        raise CorruptBundleError(f"{path}: unreadable header") from None
    if header.get("magic") != _NET_MAGIC:
        raise CorruptBundleError(f"{path}: not a subnet file")
    _check_version(header.get("format_version"), path)
    arch = Architecture(**header["architecture"])
    expect = arch.param_count() * 8
    if len(blob) != expect:
        raise CorruptBundleError(
            f"{path}: expected {expect} parameter bytes, found {len(blob)}"
        )
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return Subnet(
        params=NetworkParams(arch, flat),
        target_mean=float(header["target_mean"]),
        target_std=float(header["target_std"]),
        target_constant=bool(header["target_constant"]),
    )


def save_model(model: McnnModel, bundle_dir) -> None:
    os.makedirs(bundle_dir, exist_ok=True)
    names = [f"subnet_{k:03d}.net" for k in range(model.k)]
    manifest = {
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "architecture": asdict(model.arch),
        "hyperparameters": asdict(model.hyper),
        "master_seed": int(model.master_seed),
        "bs_xy": list(model.bs_xy),
        "bounds": list(model.bounds) if model.bounds is not None else None,
        "subnets": names,
    }
    _dump_json(manifest, os.path.join(bundle_dir, "manifest.json"))
    save_partition(model.partition, os.path.join(bundle_dir, "partition.json"))
    for k, name in enumerate(names):
        _save_subnet(model.subnets[k], os.path.join(bundle_dir, name))


def load_model(bundle_dir) -> McnnModel:
    manifest_path = os.path.join(bundle_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CorruptBundleError(f"{bundle_dir}: missing manifest.json")
    manifest = _load_json(manifest_path)
    _check_version(manifest.get("format_version"), manifest_path)
    partition = load_partition(os.path.join(bundle_dir, "partition.json"))
    if int(manifest["k"]) != partition.k:
        raise CorruptBundleError(
            f"{bundle_dir}: manifest k={manifest['k']} but partition has "
            f"{partition.k} clusters"
        )
    subnets = [
        _load_subnet(os.path.join(bundle_dir, name))
        for name in manifest["subnets"]
    ]
    bounds = manifest.get("bounds")
    return McnnModel(
        partition=partition,
        subnets=subnets,
        arch=Architecture(**manifest["architecture"]),
        hyper=Hyperparameters(**manifest["hyperparameters"]),
        master_seed=int(manifest["master_seed"]),
        bs_xy=tuple(manifest.get("bs_xy", (0.0, 0.0))),
        bounds=tuple(bounds) if bounds is not None else None,
    )


GRID_HEADER = ["x", "y", "gain_db"]


def write_grid_csv(grid: np.ndarray, env, path) -> None:
    """CSV of (x, y, gain_db) rows for every unblocked cell, row-major."""
    ix, iy = np.nonzero(~env.blocked)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(GRID_HEADER) + "\n")
        xs = env.cell_x[ix]
        ys = env.cell_y[iy]
        vals = grid[ix, iy]
        for x, y, v in zip(xs, ys, vals):
            fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")


def read_grid_csv(path) -> np.ndarray:
    """Rows of (x, y, gain_db) as an (N, 3) array."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != GRID_HEADER:
            raise CorruptBundleError(
                f"{path}: expected header {','.join(GRID_HEADER)}"
            )
        rows = [line.split(",") for line in fh if line.strip()]
    return np.asarray(rows, dtype=np.float64)


def export_heatmap(grid: np.ndarray, blocked: np.ndarray, path) -> None:
    """Binary PGM image of the grid.

    Blocked cells are black (0). Gains map linearly onto intensities 1..255
    with the grid minimum at 1 and maximum at 255; a constant grid renders
    uniformly at 255. Row 0 of the image is the top of the map (largest y).
    """
    if grid.shape != blocked.shape:
        raise ValueError("grid and blocked mask differ in shape")
    vals = grid[~blocked]
    if vals.size and np.isnan(vals).any():
        raise ValueError("grid holds NaN at unblocked cells")
    img = np.zeros(grid.shape, dtype=np.uint8)
    if vals.size:
        lo = float(vals.min())
        hi = float(vals.max())
        if hi > lo:
            scaled = 1.0 + 254.0 * (grid - lo) / (hi - lo)
        else:
            scaled = np.full(grid.shape, 255.0)
        img[~blocked] = np.rint(scaled[~blocked]).astype(np.uint8)
    # transpose (x, y) -> rows of y, with north (large y) on top
    raster = img.T[::-1, :]
    ny, nx = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())
