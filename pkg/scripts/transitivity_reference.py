"""Regenerate the fixed-seed reference run of the transitivity benchmark.

Usage: python3 scripts/transitivity_reference.py [--seed 0] [--out reference/transitivity_seed0.json]
"""

import argparse
import json
import platform
from pathlib import Path

import numpy as np

from transc.benchmark import run_transitivity


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()
    out = args.out or Path(__file__).resolve().parent.parent / "reference" / f"transitivity_seed{args.seed}.json"
    result = run_transitivity(args.seed).to_dict()
    result["environment"] = {"python": platform.python_version(), "numpy": np.__version__}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result["modes"], indent=2))


if __name__ == "__main__":
    main()
