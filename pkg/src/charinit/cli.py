"""Command-line driver: ``charinit solve | verify | convergence``.

Exit codes: 0 success, 1 verification failure, 2 invalid config or free
data, 3 solver stage failure, 4 missing or corrupt files.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import RunConfig, config_from_dict, load_config, sha256_json, tomllib
from .freedata import FreeDataError
from .geometry import GridError, SurfaceId
from .hierarchy import StageError, solve_surface
from .io import (BundleFileError, file_sha256, read_bundle, read_json, surface_dir, write_bundle,
                 write_json)
from .kinetic import QuadratureError
from .residuals import CONSTRAINTS, estimate_convergence, verify_bundle

EXIT_OK, EXIT_VERIFY, EXIT_INVALID, EXIT_STAGE, EXIT_FILES = 0, 1, 2, 3, 4
DEFAULT_LADDER = [(17, 8), (33, 12), (65, 16)]
# hamiltonian is algebraic in psi11, so its residual only measures the finite-difference
# reconstruction; the order requirement applies to the marched constraints
ORDER_CHECKED = ("momentum", "trace_momentum", "traceless", "final")

log = logging.getLogger("charinit")


def _strip_times(stage_log: list[dict]) -> list[dict]:
    return [{k: v for k, v in e.items() if k != "wall_time"} for e in stage_log]


def _load(path) -> RunConfig:
    try:
        return load_config(path)
    except OSError as e:
        raise BundleFileError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise BundleFileError(f"config {path} is not valid TOML: {e}") from None


def solve_all(cfg: RunConfig, N_gen=None, N_ang=None):
    free = cfg.free_data()
    grid0 = cfg.make_grid(N_gen, N_ang)
    free.validate(grid0)
    bundles = {}
    for sid in SurfaceId:
        grid = cfg.make_grid(N_gen, N_ang, sid)
        bundles[sid] = solve_surface(free, grid, cfg.quadrature.Q, cfg.run.integrator,
                                     validate=False)
    return free, bundles


def _surface_grid(cfg: RunConfig, sid: SurfaceId, n_keep: int | None):
    grid = cfg.make_grid(surface_id=sid)
    return grid.truncated(n_keep) if n_keep else grid


def run_solve(cfg: RunConfig, out: Path) -> dict:
    """Solve both surfaces, write bundles and the manifest; returns the manifest."""
    free, bundles = solve_all(cfg)
    tol = cfg.tolerance_map()
    surfaces, times = {}, {}
    for sid, b in bundles.items():
        d = surface_dir(out, sid)
        index = write_bundle(b, d)
        report = verify_bundle(b, b.free, cfg.quadrature.Q, tol)
        surfaces[sid.value] = {
            "n_gen": b.grid.N_gen,
            "truncated_at": b.truncated_at,
            "files": {name: {"path": f"{sid.value}/{p}", "sha256": file_sha256(d / p)}
                      for name, p in index.items()},
            "stage_log": _strip_times(b.stage_log),
            "residuals": report.summary(),
        }
        times[sid.value] = {e["stage"]: e["wall_time"] for e in b.stage_log if "wall_time" in e}
    manifest = {"config": cfg.canonical(), "config_hash": cfg.content_hash(),
                "surfaces": surfaces}
    manifest["manifest_hash"] = sha256_json(manifest)
    manifest["wall_times"] = times
    write_json(manifest, out / "manifest.json")
    return manifest


def run_verify(bundle_dir: Path) -> tuple[dict, bool]:
    manifest = read_json(bundle_dir / "manifest.json")
    try:
        cfg = config_from_dict(manifest["config"])
        surfaces = manifest["surfaces"]
    except (KeyError, TypeError, ValidationError) as e:
        raise BundleFileError(f"manifest is corrupt: {e}") from None
    free = cfg.free_data()
    tol = cfg.tolerance_map()
    out, ok = {}, True
    for sid in SurfaceId:
        meta = surfaces.get(sid.value)
        if meta is None:
            raise BundleFileError(f"manifest lists no {sid.value} bundle")
        grid = _surface_grid(cfg, sid, meta.get("truncated_at"))
        bundle = read_bundle(surface_dir(bundle_dir, sid), grid, free, meta)
        report = verify_bundle(bundle, bundle.free, cfg.quadrature.Q, tol)
        out[sid.value] = report.summary()
        ok = ok and report.ok
    return out, ok


def run_convergence(cfg: RunConfig, out: Path, levels: int | None) -> tuple[dict, bool]:
    ladder = [tuple(x) for x in (cfg.grid.ladder or DEFAULT_LADDER)]
    if levels is not None:
        ladder = ladder[:levels]
    if len(ladder) < 3:
        raise ValueError(f"convergence needs at least 3 refinement levels, got {len(ladder)}")
    tol = cfg.tolerance_map()
    rows, hs = [], []
    table = {sid.value: {c: [] for c in CONSTRAINTS} for sid in SurfaceId}
    for N_gen, N_ang in ladder:
        _, bundles = solve_all(cfg, N_gen, N_ang)
        h = cfg.grid.L / (N_gen - 1)
        hs.append(h)
        row = {"N_gen": N_gen, "N_ang": N_ang, "h": h}
        for sid, b in bundles.items():
            rep = verify_bundle(b, b.free, cfg.quadrature.Q, tol)
            for c in CONSTRAINTS:
                table[sid.value][c].append(rep.norms[c]["max"])
                row[f"{sid.value}_{c}_max"] = rep.norms[c]["max"]
                row[f"{sid.value}_{c}_rms"] = rep.norms[c]["rms"]
        rows.append(row)
    fits, ok = {}, True
    for sid, per in table.items():
        fits[sid] = {}
        for c, vals in per.items():
            fit = estimate_convergence(hs, vals)
            fits[sid][c] = fit.as_dict()
            if c in ORDER_CHECKED and not fit.saturated and fit.order < tol["min_order"]:
                ok = False
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    result = {"config_hash": cfg.content_hash(), "ladder": ladder, "fits": fits,
              "min_order": tol["min_order"], "ok": ok}
    write_json(result, out / "convergence.json")
    return result, ok


# -- argument handling -------------------------------------------------------------

def _print_report(summary: dict, quiet: bool):
    if quiet:
        return
    for sid, rep in summary.items():
        for c in CONSTRAINTS:
            n = rep["norms"][c]
            flag = "ok" if rep["passed"][c] else "FAIL"
            print(f"{sid} {c:>14}: max {n['max']:.3e}  rms {n['rms']:.3e}  tol {rep['tolerances'][c]:.0e}  {flag}")
        tc = rep["diagnostics"]["trace_closure"]["max"]
        print(f"{sid} trace closure {tc:.3e}; curvature_trace gap {rep['diagnostics']['curvature_trace_gap']['max']:.3e}")


def cmd_solve(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out or Path("out") / cfg.run.name)
    manifest = run_solve(cfg, out)
    if not args.quiet:
        print(f"wrote {out} (manifest {manifest['manifest_hash'][:12]})")
        _print_report({s: v["residuals"] for s, v in manifest["surfaces"].items()}, False)
    return EXIT_OK


def cmd_verify(args) -> int:
    bundle_dir = Path(args.out or args.bundle)
    summary, ok = run_verify(bundle_dir)
    write_json({"surfaces": summary, "ok": ok}, bundle_dir / "verify_report.json")
    _print_report(summary, args.quiet)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_convergence(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out or Path("out") / f"{cfg.run.name}_convergence")
    result, ok = run_convergence(cfg, out, args.levels)
    if not args.quiet:
        for sid, per in result["fits"].items():
            print(sid, "  ".join(f"{c}: {f['order'] if isinstance(f['order'], str) else round(f['order'], 2)}"
                                 for c, f in per.items()))
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="charinit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve both surfaces and write bundles plus manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_solve)
    v = sub.add_parser("verify", help="recompute constraint residuals from bundle files")
    v.add_argument("bundle", nargs="?", help="bundle directory (same as --out)")
    v.add_argument("--out")
    v.add_argument("--quiet", action="store_true")
    v.set_defaults(fn=cmd_verify)
    c = sub.add_parser("convergence", help="solve and verify over a refinement ladder")
    c.add_argument("--config", required=True)
    c.add_argument("--out")
    c.add_argument("--levels", type=int)
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(fn=cmd_convergence)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify" and not (args.bundle or args.out):
        print("error: verify needs a bundle directory", file=sys.stderr)
        return EXIT_FILES
    try:
        return args.fn(args)
    except (FreeDataError, ValidationError, GridError, QuadratureError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:
        if isinstance(e, BundleFileError):
            print(f"file error: {e}", file=sys.stderr)
            return EXIT_FILES
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
