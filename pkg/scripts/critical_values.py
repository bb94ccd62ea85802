"""Build and save SupNBB critical-value tables for p = 1..P.

Example::

    python3 scripts/critical_values.py --max-p 3 --reps 200000 --outdir tables/
"""

from __future__ import annotations

import argparse
from pathlib import Path

from breakscan import streams
from breakscan.limitdist import FunctionalSpec, build_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-p", type=int, default=2)
    ap.add_argument("--reps", type=int, default=200_000)
    ap.add_argument("--grid", type=int, default=1000)
    ap.add_argument("--trimming", type=float, nargs=2, default=(0.15, 0.85))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=streams.default_workers())
    ap.add_argument("--outdir", type=Path, default=Path("tables"))
    args = ap.parse_args()

    args.outdir.mkdir(parents=True, exist_ok=True)
    lo, hi = args.trimming
    print(f"{'p':>3} {'0.90':>8} {'0.95':>8} {'0.99':>8}")
    for p in range(1, args.max_p + 1):
        spec = FunctionalSpec(kind="SupNBB", p=p, trimming=(lo, hi), grid_points=args.grid)
        table = build_table(spec, args.reps, master_seed=args.seed + p, threads=args.threads)
        table.save(args.outdir / f"supnbb_p{p}_{lo:g}_{hi:g}.json")
        q = table.quantiles
        print(f"{p:>3} {q[0.90]:8.3f} {q[0.95]:8.3f} {q[0.99]:8.3f}")


if __name__ == "__main__":
    main()
