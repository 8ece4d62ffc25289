"""Score transformation models against each other on one correspondence set:
every requested model is fitted at increasing control point counts and scored
on a fixed held-out checkpoint set. Prints a ranking table and writes the full
grid to sweep.csv.

Usage:
    python3 scripts/compare_models.py --corr run/correspondences.csv \
        --out-dir /tmp/cmp [--models poly1,poly3,proj22] [--dem dem.bin]
"""

import argparse
from pathlib import Path

from coreg.config import parse_cp_counts
from coreg.geomodels import all_model_specs, min_cp_count, model_spec_from_name
from coreg.matcher import correspondences_from_csv
from coreg.metrics import sweep, sweep_to_csv
from coreg.raster import load_raster


def pick_specs(names: str, have_dem: bool, n_avail: int):
    if names == "all":
        specs = all_model_specs()
    else:
        specs = [model_spec_from_name(n.strip())
                 for n in names.split(",") if n.strip()]
    kept = []
    for spec in specs:
        if spec.family == "rfm" and not have_dem:
            print(f"skipping {spec.name}: needs --dem for point heights")
            continue
        if min_cp_count(spec) > n_avail:
            print(f"skipping {spec.name}: needs {min_cp_count(spec)} control "
                  f"points, only {n_avail} available for fitting")
            continue
        kept.append(spec)
    return kept


def run(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corrs = correspondences_from_csv(Path(args.corr).read_text())
    dem = load_raster(args.dem) if args.dem else None

    counts = parse_cp_counts(args.cp_counts)
    fit_avail = len(corrs) - args.checkpoints
    counts = [c for c in counts if c <= fit_avail]
    if not counts:
        print(f"no usable control point counts: {len(corrs)} correspondences "
              f"minus {args.checkpoints} checkpoints leaves {fit_avail}")
        return 1

    specs = pick_specs(args.models, dem is not None, max(counts))
    if not specs:
        print("nothing to compare")
        return 1

    print(f"{len(corrs)} correspondences, {args.checkpoints} checkpoints, "
          f"control point counts {counts}")
    results = sweep(specs, corrs, args.checkpoints, counts, args.seed,
                    pixel_size=args.pixel_size, dem=dem)
    (out / "sweep.csv").write_text(sweep_to_csv(results))
    print(f"wrote {out / 'sweep.csv'}\n")

    top = max(counts)
    idx = counts.index(top)
    table = []
    for res in results:
        rmse = res.rmse[idx]
        table.append((float("inf") if rmse is None else rmse, res.spec.name))
    table.sort()
    print(f"checkpoint rmse at {top} control points (best first):")
    for rmse, name in table:
        shown = "fit failed" if rmse == float("inf") else f"{rmse:10.4f} px"
        print(f"  {name:14s} {shown}")
    return 0


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corr", required=True,
                    help="correspondences.csv from a match run")
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--models", default="all")
    ap.add_argument("--cp-counts", default="25,35,45,55,65,75,85,95")
    ap.add_argument("--checkpoints", type=int, default=48)
    ap.add_argument("--dem", help="height raster, required for rfm models")
    ap.add_argument("--pixel-size", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


if __name__ == "__main__":
    raise SystemExit(run(parse_args()))
