"""
summarize_run.py — Summarize a diagnostics CSV written by `manage.py solve`.

Purpose:
- Reads <out>/diagnostics.csv with pandas.
- Prints initial/final energy, accepted steps, attempts and mean Newton iterations.
- Reports the first time dt reaches each requested cap and where rejections happened.

Usage:
    python scripts/summarize_run.py runs/example2/diagnostics.csv --caps 2,200
"""

import argparse
import os
import sys

import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app.utils.helpers import parse_float_list  # noqa: E402


def summarize(frame: pd.DataFrame, caps=()) -> dict:
    """Headline numbers of one run: energies, step counts, Newton effort."""
    accepted = frame[frame["accepted"].astype(str) == "True"]
    rejected = frame[frame["accepted"].astype(str) != "True"]
    out = {
        "accepted_steps": int(len(accepted)),
        "attempts": int(len(frame)),
        "final_time": float(accepted["t"].iloc[-1]) if len(accepted) else 0.0,
        "final_energy": float(accepted["energy"].iloc[-1]) if len(accepted) else float("nan"),
        "mean_newton": float(accepted["newton_iterations"].mean()) if len(accepted) else 0.0,
        "max_mass_defect": float(accepted["mass_defect"].max()) if len(accepted) else 0.0,
        "rejection_times": [float(t) for t in rejected["t"] - rejected["dt"]],
    }
    for cap in caps:
        hit = accepted[accepted["dt"] >= cap * (1 - 1e-12)]
        out[f"dt_reaches_{cap:g}"] = float(hit["t"].iloc[0]) if len(hit) else None
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("csv")
    parser.add_argument("--caps", default="", help="dt caps to report, e.g. '2,200'")
    args = parser.parse_args(argv)

    frame = pd.read_csv(args.csv)
    for key, value in summarize(frame, parse_float_list(args.caps)).items():
        print(f"{key:>20}: {value}")


if __name__ == "__main__":
    main()
