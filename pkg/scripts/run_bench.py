"""Full timing matrix: {custom, inject} x {dynamic, fused} x {28, 784}.

Writes records.csv, summary.csv, plot_fwd.dat, plot_bwd.dat and
graph_report.txt under --out-dir (default out/bench).
"""
import sys

from fgi.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out-dir" not in args:
        args += ["--out-dir", "out/bench"]
    sys.exit(main(["bench", *args]))
