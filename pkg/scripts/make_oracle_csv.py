"""Write one of the synthetic oracle datasets to CSV.

    python3 scripts/make_oracle_csv.py fairness data/fairness_oracle.csv --per-cell 500
    python3 scripts/make_oracle_csv.py gaussian data/gaussian.csv --per-cell 1000
    python3 scripts/make_oracle_csv.py fairness data/fairness_imbalanced.csv --minority-fraction 0.1
"""
import argparse
from pathlib import Path

from mcrage.io import write_dataset
from mcrage.oracle import fairness_oracle, gaussian_two_class
from mcrage.schema import make_imbalanced


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("kind", choices=["fairness", "gaussian"])
    ap.add_argument("output", type=Path)
    ap.add_argument("--per-cell", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--minority-fraction", type=float, help="fairness oracle only: keep this share of sex=F rows")
    args = ap.parse_args()
    make = fairness_oracle if args.kind == "fairness" else gaussian_two_class
    ds = make(args.per_cell, seed=args.seed)
    if args.minority_fraction is not None:
        if args.kind != "fairness":
            ap.error("--minority-fraction needs the fairness oracle")
        ds = make_imbalanced(ds, "sex", 1, args.minority_fraction, seed=args.seed)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(args.output, ds)
    print(f"wrote {ds.n} rows to {args.output}")


if __name__ == "__main__":
    main()
