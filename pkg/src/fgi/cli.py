"""Command line: ``fgi {train,bench,gradcheck,fuse,emit}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .autograd import Tape, backward, grad_check
from .bench import (
    BenchMatrix, emit, read_records, run_bench, summarize,
)
from .data import SEQ_LENGTHS, SeqConfig, load_mnist, synthetic_dataset
from .graph_opt import fuse
from .snapshot import GraphSnapshot, snapshot
from .snn import save_weights
from .surrogate import (
    DEFAULT_SHAPE, Mechanism, TanhDeriv, bypass, dblgaussian, gaussian, inject,
    parse_shape, spike, step,
)
from .trainer import TrainConfig, evaluate, train


def _dataset(args, split="train"):
    if args.data_dir:
        return load_mnist(args.data_dir, split)
    return synthetic_dataset(args.seed if split == "train" else args.seed + 1, args.n_per_class)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=parse_shape, default=DEFAULT_SHAPE,
                   help="gaussian[:mu:sig] | dblgaussian[:sig1:sig2:p] | tanh")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--precision", choices=sorted(T.DTYPES), default="f64")
    p.add_argument("--data-dir", default=None, help="directory with the four MNIST IDX files")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--n-per-class", type=int, default=128,
                   help="synthetic samples per class when no --data-dir is given")


def cmd_train(args) -> int:
    cfg = TrainConfig(
        iterations=args.iters, lr=args.lr, optimizer=args.optimizer, seed=args.seed,
        mechanism=args.mechanism, shape=args.shape,
        seq=SeqConfig(args.seq_len, args.batch or 128), hidden=args.hidden or 16,
        precision=args.precision,
    )
    data = _dataset(args)
    metrics = train(cfg, data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics.to_csv(out / "metrics.csv")
    save_weights(out / "weights.bin", metrics.weights)
    acc = evaluate(metrics.weights, _dataset(args, "test"), cfg)
    print(f"final loss {metrics.loss[-1]:.6f}  test accuracy {acc:.4f}  -> {out}")
    return 0


def cmd_bench(args) -> int:
    matrix = BenchMatrix(
        mechanisms=args.mechanism, graph_modes=args.graph_mode, seq_lens=args.seq_len,
        iterations=args.iters, repeats=args.repeats, seed=args.seed, shape=args.shape,
        batch_size=args.batch or 16, hidden=args.hidden or 8, precision=args.precision,
    )
    data = load_mnist(args.data_dir) if args.data_dir else None
    run = run_bench(matrix, data, log=lambda msg: print(msg, file=sys.stderr))
    summary = summarize(run.records, run.cells)
    emit(run.records, summary, args.out_dir)
    lines = [f"{'/'.join(map(str, c))} {r.keyvalues()}" for c, r in run.reports.items()]
    lines += [f"{'/'.join(map(str, c))} nodes_per_iter={n}" for c, n in run.nodes_per_iter.items()]
    (Path(args.out_dir) / "graph_report.txt").write_text("\n".join(lines) + "\n")
    for note in run.notices:
        print(note, file=sys.stderr)
    for s in summary:
        print(f"{s.mechanism:>7} {s.graph_mode:>7} {s.seq_len:>4}  "
              f"fwd {s.fwd_mean_ms:9.3f} ms  bwd {s.bwd_mean_ms:9.3f} ms  speedup {s.speedup:.2f}")
    return 0 if run.ok else 1


def cmd_gradcheck(args) -> int:
    grid = np.round(np.arange(-500, 501) * 0.01, 2)
    smooth = np.linspace(-3.0, 3.0, 61)
    checks = []
    for name, fn in [("tanh", lambda v: v.tanh()), ("exp", lambda v: v.exp()),
                     ("gaussian", lambda v: gaussian(v, 0.0, 1.0)),
                     ("dblgaussian", lambda v: dblgaussian(v))]:
        checks.append((f"autodiff vs central difference: {name}", grad_check(fn, smooth), 1e-5))

    tape = Tape()
    x = tape.leaf(grid, requires_grad=True, name="x")
    backward(inject(x, step(x), dblgaussian(x)).sum())
    checks.append(("inject gradient == dblgaussian", float(np.max(np.abs(x.grad - dblgaussian(grid)))), 1e-14))

    tape = Tape()
    x = tape.leaf(grid, requires_grad=True, name="x")
    backward(bypass(step(x), x.tanh()).sum())
    closed = 1.0 - np.tanh(grid) ** 2
    checks.append(("bypass gradient == 1 - tanh^2", float(np.max(np.abs(x.grad - closed))), 1e-12))

    shape = args.shape
    grads = {}
    for mech in Mechanism:
        if mech is Mechanism.BYPASS and not isinstance(shape, TanhDeriv):
            continue
        tape = Tape()
        x = tape.leaf(grid, requires_grad=True, name="x")
        backward(spike(x, shape, mech).sum())
        grads[mech] = x.grad
    ref = grads[Mechanism.CUSTOM_BACKWARD]
    for mech, g in grads.items():
        checks.append((f"spike[{shape.token}] {mech.value} vs custom", float(np.max(np.abs(g - ref))), 1e-12))

    failed = 0
    for label, err, tol in checks:
        ok = err <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {label}: {err:.3e} (tol {tol:.0e})")
    return 1 if failed else 0


def _demo_graph(kind: str) -> GraphSnapshot:
    tape = Tape()
    x = tape.leaf(np.linspace(-2, 2, 5), requires_grad=True, name="x")
    if kind == "inject":
        y = inject(x, step(x), dblgaussian(x))
    elif kind == "bypass":
        y = bypass(step(x), x.tanh())
    else:
        raise ValueError(f"unknown demo graph {kind!r}")
    return snapshot(tape, [y.sum()])


def cmd_fuse(args) -> int:
    if args.snapshot:
        graph = GraphSnapshot.parse(Path(args.snapshot).read_text())
    else:
        graph = _demo_graph(args.demo)
    fused, report = fuse(graph)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "original.snapshot").write_text(graph.dump())
    (out / "fused.snapshot").write_text(fused.dump())
    (out / "fuse_report.txt").write_text(report.keyvalues() + "\n")
    print(report.summary())
    print(report.keyvalues())
    return 0


def cmd_emit(args) -> int:
    records = read_records(args.records)
    written = emit(records, summarize(records), args.out_dir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the ALIF network and write metrics.csv")
    _common(p)
    p.add_argument("--seq-len", type=int, choices=SEQ_LENGTHS, default=28)
    p.add_argument("--mechanism", type=Mechanism.parse, default=Mechanism.INJECT)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.set_defaults(func=cmd_train, iters=200)

    p = sub.add_parser("bench", help="time mechanism x graph mode x sequence length")
    _common(p)
    p.add_argument("--seq-len", type=int, nargs="+", choices=SEQ_LENGTHS, default=[28, 784])
    p.add_argument("--mechanism", type=Mechanism.parse, nargs="+",
                   default=[Mechanism.CUSTOM_BACKWARD, Mechanism.INJECT])
    p.add_argument("--graph-mode", nargs="+", choices=("dynamic", "fused"), default=["dynamic", "fused"])
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="run the gradient oracles and print PASS/FAIL lines")
    p.add_argument("--shape", type=parse_shape, default=parse_shape("dblgaussian"))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fuse", help="fuse a snapshot file (or a demo graph)")
    p.add_argument("--snapshot", default=None)
    p.add_argument("--demo", choices=("inject", "bypass"), default="inject")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("emit", help="rebuild summary.csv and plot data from records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_emit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
