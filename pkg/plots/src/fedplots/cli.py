"""Command line for rendering experiment figures.

Examples:
    plots --glob 'out/sparsity_sweep/K*.csv' --x rounds --y train_loss --out fig_rounds.png
    plots --glob 'out/sparsity_sweep/K*.csv' --x uplink_bits --y test_accuracy --out fig_bits.png
    plots --glob 'out/sparsity_sweep/partition_stats_*.csv' --out fig_partition.png
"""

from __future__ import annotations

import argparse
import glob
import sys

from .render import X_AXES, Y_AXES, PlotJob, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots", description="Render experiment CSV logs into figures.")
    parser.add_argument("--glob", required=True, dest="pattern", help="glob matching the input CSV files")
    parser.add_argument("--x", default="rounds", choices=sorted(X_AXES), help="x axis (curve figures)")
    parser.add_argument("--y", default="train_loss", choices=sorted(Y_AXES), help="y axis (curve figures)")
    parser.add_argument("--legend-from", default="cell", help="config key used for curve labels")
    parser.add_argument("--out", required=True, help="output image path (.png or .svg; both get written)")
    args = parser.parse_args(argv)

    inputs = tuple(sorted(glob.glob(args.pattern)))
    if not inputs:
        print(f"no input CSVs match {args.pattern!r}", file=sys.stderr)
        return 2
    job = PlotJob(inputs=inputs, x_axis=args.x, y_axis=args.y, legend_from=args.legend_from, output=args.out)
    try:
        written = render(job)
    except (SchemaError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
