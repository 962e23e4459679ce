"""Wall time of binned, iterative and sorting selection as m grows.

    python3 scripts/bench_scaling.py --sizes 1e5,1e6,1e7 --repeats 3
"""

import argparse

from fastlsu.sim import bench_scaling


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1e5,1e6,1e7")
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sizes = [int(float(s)) for s in args.sizes.split(",")]
    rows = bench_scaling(sizes, args.alpha, seed=args.seed, repeats=args.repeats)
    base = {}
    print(f"{'m':>12} {'variant':>10} {'seconds':>10} {'ratio':>7} {'r':>8} {'passes':>6}")
    for row in rows:
        if row["error"]:
            print(f"{row['m']:>12} {row['variant']:>10} {row['error']}")
            continue
        prev = base.get(row["variant"])
        ratio = f"{row['seconds'] / prev:.1f}" if prev else "-"
        base[row["variant"]] = row["seconds"]
        print(f"{row['m']:>12} {row['variant']:>10} {row['seconds']:>10.4f} {ratio:>7} "
              f"{row['r']:>8} {row['passes']:>6}")


if __name__ == "__main__":
    main()
