"""Assemble data/adult.csv from the UCI Adult train and test files.

The raw files are taken from the ``responsibly`` wheel, which ships them
verbatim; only ``pip download`` access to a package index is needed.
"""

import argparse
import csv
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]


def _rows(text):
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != len(COLUMNS):
            continue
        fields[-1] = fields[-1].rstrip(".")
        yield fields


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/adult.csv")
    args = parser.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "-d", tmp, "responsibly==0.1.2"],
            check=True,
        )
        wheel = next(Path(tmp).glob("responsibly-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            train = zf.read("responsibly/dataset/adult/adult.data").decode()
            test = zf.read("responsibly/dataset/adult/adult.test").decode()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in list(_rows(train)) + list(_rows(test)):
            writer.writerow(row)
            n += 1
    print(f"wrote {n} rows to {out}")


if __name__ == "__main__":
    main()
