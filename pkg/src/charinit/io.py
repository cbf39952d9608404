"""Plain-text persistence of solved bundles and run manifests.

One CSV per field per surface. The header names the coordinates (the
generator coordinate, then ``y2 .. yn``) followed by the stored components;
rows run over the nodes in C order (generator slowest). Values are written
with 17 significant digits, so a read reproduces every float exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .freedata import FreeDataSpec
from .geometry import AngularTensorField, CharSurfaceGrid, ScalarField, SurfaceId
from .hierarchy import SolvedInitialData

SCALARS = ("theta", "phi", "psi11", "chi", "u", "psi01")
TENSORS = {"Theta": 2, "psi1a": 1, "psi_ab": 2}
FIELD_NAMES = ("Theta", "theta", "phi", "psi11", "psi1a", "chi", "u", "psi_ab", "psi01")
FMT = "%.17g"


class BundleFileError(ValueError):
    """A bundle file is missing, truncated or inconsistent with its grid."""


def _coord_columns(grid: CharSurfaceGrid) -> tuple[list[str], np.ndarray]:
    names = [grid.surface_id.generator_name] + [f"y{a + 2}" for a in range(grid.k)]
    mesh = np.meshgrid(grid.generator_coords(), *grid.angular_coords(), indexing="ij")
    return names, np.stack([m.reshape(-1) for m in mesh], axis=1)


def _field_matrix(name: str, bundle: SolvedInitialData) -> tuple[list[str], np.ndarray]:
    if name in SCALARS:
        f: ScalarField = getattr(bundle, name)
        return [name], f.values.reshape(-1, 1)
    t: AngularTensorField = getattr(bundle, name)
    comps = t.components.reshape(t.components.shape[0], -1).T
    return t.labels(name), comps


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_bundle(bundle: SolvedInitialData, directory: str | Path) -> dict[str, str]:
    """Write every field of ``bundle``; returns ``{field: relative path}``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coord_names, coords = _coord_columns(bundle.grid)
    index = {}
    for name in FIELD_NAMES:
        cols, values = _field_matrix(name, bundle)
        path = directory / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(coord_names + cols) + "\n")
            np.savetxt(fh, np.hstack([coords, values]), fmt=FMT, delimiter=",")
        index[name] = path.name
    return index


def _read_csv(path: Path, expected_cols: list[str], n_rows: int) -> np.ndarray:
    if not path.is_file():
        raise BundleFileError(f"missing field file {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            header = next(csv.reader([fh.readline()]))
            if header != expected_cols:
                raise BundleFileError(f"{path.name}: header {header} != expected {expected_cols}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError, StopIteration) as e:
        if isinstance(e, BundleFileError):
            raise
        raise BundleFileError(f"{path.name}: unreadable ({e})") from None
    if data.shape != (n_rows, len(expected_cols)):
        raise BundleFileError(f"{path.name}: expected {n_rows} rows x {len(expected_cols)} columns, "
                              f"found {data.shape[0]} x {data.shape[1] if data.ndim == 2 else 0}")
    if not np.all(np.isfinite(data)):
        raise BundleFileError(f"{path.name}: non-finite entries")
    return data


def read_bundle(directory: str | Path, grid: CharSurfaceGrid, free: FreeDataSpec,
                meta: dict | None = None) -> SolvedInitialData:
    """Rebuild a bundle from its files; ``grid`` must be the (possibly truncated) solve grid."""
    directory = Path(directory)
    coord_names, coords = _coord_columns(grid)
    n_rows = coords.shape[0]
    shape = grid.shape
    got = {}
    for name in FIELD_NAMES:
        if name in SCALARS:
            cols = [name]
        else:
            dummy = AngularTensorField(grid, TENSORS[name],
                                       np.zeros(((grid.k if TENSORS[name] == 1 else
                                                  grid.k * (grid.k + 1) // 2),) + shape))
            cols = dummy.labels(name)
        data = _read_csv(directory / f"{name}.csv", coord_names + cols, n_rows)
        if np.max(np.abs(data[:, :len(coord_names)] - coords)) > 1e-12 * (1 + np.abs(coords).max()):
            raise BundleFileError(f"{name}.csv: coordinates do not match the grid")
        vals = data[:, len(coord_names):]
        if name in SCALARS:
            got[name] = ScalarField(grid, vals[:, 0].reshape(shape))
        else:
            got[name] = AngularTensorField(grid, TENSORS[name], vals.T.reshape((-1,) + shape))
    meta = meta or {}
    return SolvedInitialData(surface_id=grid.surface_id, grid=grid,
                             free=free.surface(grid.surface_id),
                             stage_log=meta.get("stage_log", []),
                             truncated_at=meta.get("truncated_at"), **got)


def write_json(obj, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise BundleFileError(f"missing {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise BundleFileError(f"{path}: unreadable ({e})") from None


def surface_dir(out: str | Path, sid: SurfaceId) -> Path:
    return Path(out) / sid.value


__all__ = ["BundleFileError", "FIELD_NAMES", "file_sha256", "read_bundle", "read_json",
           "surface_dir", "write_bundle", "write_json"]
