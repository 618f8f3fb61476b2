"""Write the California Housing table as the CSV layout ``dynpmnn`` reads.

Needs pandas and network access on first use (scikit-learn downloads and caches the data).

    python scripts/export_california_csv.py data/california_housing.csv
"""

import argparse

from sklearn.datasets import fetch_california_housing


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", help="destination CSV path")
    args = parser.parse_args()
    frame = fetch_california_housing(as_frame=True).frame
    frame.to_csv(args.out, index=False)
    print(f"wrote {len(frame)} rows to {args.out}")


if __name__ == "__main__":
    main()
