"""Regenerate the bundled fixture CSVs and schemas under configs/."""

import argparse
from pathlib import Path

from rectflow.data import save_schema, write_csv
from rectflow.datasets import DESK_SCHEMA, desk_fixture

FIXTURES = {
    # name: (rows, fixture seed)
    "toy": (600, 1),
    "desk": (5000, 0),
}


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default=Path(__file__).resolve().parent.parent / "configs", type=Path)
    args = p.parse_args(argv)
    for name, (n, seed) in FIXTURES.items():
        out = args.root / name
        out.mkdir(parents=True, exist_ok=True)
        write_csv(desk_fixture(n, seed), out / f"{name}.csv")
        save_schema(DESK_SCHEMA, out / "schema.json")
        print(f"wrote {out / f'{name}.csv'} ({n} rows)")


if __name__ == "__main__":
    main()
