"""Write scikit-learn's 8x8 digits as data/digits.csv (label,p0..p63; pixels 0-16)."""

import argparse
import csv
import pathlib

from sklearn.datasets import load_digits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=pathlib.Path,
                    default=pathlib.Path(__file__).resolve().parents[1] / "data" / "digits.csv")
    args = ap.parse_args()

    digits = load_digits()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + [f"p{i}" for i in range(digits.data.shape[1])])
        for x, y in zip(digits.data, digits.target):
            w.writerow([int(y)] + [int(v) for v in x])
    print(f"wrote {len(digits.target)} rows to {args.out}")


if __name__ == "__main__":
    main()
