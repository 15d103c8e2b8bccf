"""Record the desk-fixture reference run (single BLAS thread) as JSON."""

import argparse
import json
import platform
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from rectflow import __version__
from rectflow.config import load_config
from rectflow.pipeline import reference_run

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "desk" / "desk.json", type=Path)
    p.add_argument("--out", default=ROOT / "configs" / "desk" / "reference_run.json", type=Path)
    args = p.parse_args(argv)
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        result = reference_run(load_config(args.config))
        result["wall_s"] = round(time.perf_counter() - t0, 1)
    result["thresholds"] = {"shape_max": 5.0, "trend_max": 8.0, "c2st_min": 0.75, "mle_gap_max": 0.05}
    result["platform"] = {
        "rectflow": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
    }
    args.out.write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
