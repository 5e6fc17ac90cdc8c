"""Timing harness: mechanism x graph mode x sequence length.

``dynamic`` cells build a fresh tape every iteration.  ``fused`` cells trace
the first iteration, run the fusion pass on the snapshot, and replay the
fused graph for every iteration (trace and fusion cost land in iteration 0,
like a compile step).  Before timing, each cell's gradients on its first
batch are checked against custom-backward on a dynamic tape.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import statistics
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .autograd import Tape, backward
from .data import Dataset, SeqConfig, synthetic_dataset, to_sequence_batch
from .graph_opt import RewriteReport, fuse
from .snapshot import GraphSnapshot, replay, snapshot
from .snn import PARAM_NAMES, NetworkConfig, forward_sequence, init_weights
from .surrogate import DEFAULT_SHAPE, Mechanism, SurrogateShape, supports
from .trainer import cross_entropy_last, make_optimizer

GRAPH_MODES = ("dynamic", "fused")
WARMUP = 3

RECORD_HEADER = ["mechanism", "graph_mode", "seq_len", "iter", "fwd_ms", "bwd_ms"]
SUMMARY_HEADER = [
    "mechanism", "graph_mode", "seq_len", "fwd_mean_ms", "fwd_sd_ms",
    "bwd_mean_ms", "bwd_sd_ms", "warmup_s", "speedup",
]

Cell = Tuple[str, str, int]


@dataclass
class BenchRecord:
    mechanism: str
    graph_mode: str
    seq_len: int
    iter: int
    fwd_ms: float
    bwd_ms: float
    # not part of the CSV
    loss: float = math.nan
    nodes: int = 0

    @property
    def cell(self) -> Cell:
        return (self.mechanism, self.graph_mode, self.seq_len)


@dataclass
class BenchMatrix:
    mechanisms: Sequence = (Mechanism.CUSTOM_BACKWARD, Mechanism.INJECT)
    graph_modes: Sequence[str] = GRAPH_MODES
    seq_lens: Sequence[int] = (28, 784)
    iterations: int = 20
    repeats: int = 1
    seed: int = 0
    shape: SurrogateShape = DEFAULT_SHAPE
    batch_size: int = 16
    hidden: int = 8
    lr: float = 0.01
    precision: str = "f64"
    tolerance: Optional[float] = None

    def __post_init__(self):
        self.mechanisms = tuple(Mechanism.parse(m) for m in self.mechanisms)
        if self.iterations < WARMUP + 1:
            raise ValueError(f"need at least {WARMUP + 1} iterations (warmup + one measured)")
        for mode in self.graph_modes:
            if mode not in GRAPH_MODES:
                raise ValueError(f"unknown graph mode {mode!r}")

    @property
    def dtype(self):
        return T.DTYPES[self.precision]

    @property
    def grad_tolerance(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return 1e-10 if self.precision == "f64" else 1e-4

    def cells(self) -> List[Cell]:
        return [
            (m.value, mode, L)
            for L in self.seq_lens
            for m in self.mechanisms
            for mode in self.graph_modes
        ]


@dataclass
class BenchRun:
    records: List[BenchRecord] = field(default_factory=list)
    notices: List[str] = field(default_factory=list)
    failed: List[Cell] = field(default_factory=list)
    reports: Dict[Cell, RewriteReport] = field(default_factory=dict)
    nodes_per_iter: Dict[Cell, int] = field(default_factory=dict)
    cells: List[Cell] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


class CellFailure(RuntimeError):
    pass


def _feeds(weights, inputs, labels_onehot=None):
    feeds = dict(weights)
    for t in range(inputs.shape[0]):
        feeds[f"x{t}"] = inputs[t]
    if labels_onehot is not None:
        feeds["labels_onehot"] = labels_onehot
    return feeds


def _onehot(labels, classes, dtype):
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _trace(net: NetworkConfig, weights, inputs, labels, dtype):
    fwd = forward_sequence(inputs, net, weights, Tape(dtype=dtype))
    loss = cross_entropy_last(fwd.logits, labels)
    return fwd.tape, loss


def compile_cell(net, weights, inputs, labels, dtype) -> Tuple[GraphSnapshot, RewriteReport]:
    tape, loss = _trace(net, weights, inputs, labels, dtype)
    return fuse(snapshot(tape, [loss]))


def _gradients(net, mode, weights, inputs, labels, dtype):
    if mode == "dynamic":
        _, loss = _trace(net, weights, inputs, labels, dtype)
    else:
        compiled, _ = compile_cell(net, weights, inputs, labels, dtype)
        _, (loss,) = replay(compiled, dtype=dtype)
    grads = backward(loss)
    return {k: grads[k] for k in PARAM_NAMES}


def check_cell(net, mode, weights, inputs, labels, dtype, tol) -> float:
    """Max abs gradient deviation from custom-backward on a dynamic tape."""
    ref_net = dataclasses.replace(net, mechanism=Mechanism.CUSTOM_BACKWARD)
    ref = _gradients(ref_net, "dynamic", weights, inputs, labels, dtype)
    got = _gradients(net, mode, weights, inputs, labels, dtype)
    err = max(float(np.max(np.abs(ref[k] - got[k]))) for k in PARAM_NAMES)
    if not err <= tol:
        raise CellFailure(f"gradient mismatch {err:.3e} > {tol:.1e}")
    return err


def _run_cell(cell: Cell, m: BenchMatrix, dataset: Dataset, run: BenchRun) -> None:
    mech, mode, seq_len = cell
    seq = SeqConfig(seq_len, m.batch_size)
    net = NetworkConfig(
        n_in=seq.inputs_per_step, hidden=m.hidden, classes=dataset.classes,
        shape=m.shape, mechanism=mech, seed=m.seed,
    )
    dtype = m.dtype
    onehot_classes = dataset.classes
    for _ in range(m.repeats):
        weights = init_weights(net, dtype)
        opt = make_optimizer("adam", m.lr)
        batches = dataset.batches(m.batch_size, seed=m.seed)
        compiled = None
        for it in range(m.iterations):
            images, labels = next(batches)
            inputs = to_sequence_batch(images, seq).astype(dtype)
            if it == 0:
                check_cell(net, mode, weights, inputs, labels, dtype, m.grad_tolerance)
            t0 = time.perf_counter_ns()
            if mode == "dynamic":
                tape, loss = _trace(net, weights, inputs, labels, dtype)
                nodes = len(tape)
            else:
                if compiled is None:
                    compiled, report = compile_cell(net, weights, inputs, labels, dtype)
                    run.reports[cell] = report
                feeds = _feeds(weights, inputs, _onehot(labels, onehot_classes, dtype))
                tape, (loss,) = replay(compiled, feeds, dtype=dtype)
                nodes = len(compiled)
            loss_value = float(loss.value)
            t1 = time.perf_counter_ns()
            grads = backward(loss)
            t2 = time.perf_counter_ns()
            weights = opt.step(weights, {k: grads[k] for k in PARAM_NAMES})
            run.records.append(
                BenchRecord(mech, mode, seq_len, it, round((t1 - t0) / 1e6, 3),
                            round((t2 - t1) / 1e6, 3), loss_value, nodes)
            )
            run.nodes_per_iter[cell] = nodes


def run_bench(m: BenchMatrix, dataset: Optional[Dataset] = None, log=None) -> BenchRun:
    """Run every cell sequentially on this thread."""
    if dataset is None:
        dataset = synthetic_dataset(m.seed, n_per_class=max(m.batch_size, 32), classes=2)
    run = BenchRun(cells=m.cells())
    for cell in run.cells:
        mech = Mechanism(cell[0])
        if not supports(m.shape, mech):
            run.notices.append(f"skipped {cell}: {mech.value} cannot deliver {m.shape.token}")
            continue
        try:
            _run_cell(cell, m, dataset, run)
        except CellFailure as exc:
            run.failed.append(cell)
            run.notices.append(f"failed {cell}: {exc}")
        if log is not None:
            log(f"done {cell}")
    return run


@dataclass
class CellSummary:
    mechanism: str
    graph_mode: str
    seq_len: int
    fwd_mean_ms: float = math.nan
    fwd_sd_ms: float = math.nan
    bwd_mean_ms: float = math.nan
    bwd_sd_ms: float = math.nan
    warmup_ms: float = math.nan
    speedup: float = math.nan

    @property
    def available(self) -> bool:
        return not math.isnan(self.fwd_mean_ms)

    @property
    def total_mean_ms(self) -> float:
        return self.fwd_mean_ms + self.bwd_mean_ms


def _runs(records: List[BenchRecord]) -> List[List[BenchRecord]]:
    runs: List[List[BenchRecord]] = []
    for r in records:
        if r.iter == 0 or not runs:
            runs.append([])
        runs[-1].append(r)
    return runs


def summarize(
    records: Iterable[BenchRecord], cells: Optional[Sequence[Cell]] = None, warmup: int = WARMUP
) -> List[CellSummary]:
    """Per-cell post-warmup mean/sd, warmup cost and fused-over-dynamic speedup.

    Pure function of the records.  Repeats of a cell are split where ``iter``
    restarts at 0; warmup cost is averaged over repeats.
    """
    grouped: "OrderedDict[Cell, List[BenchRecord]]" = OrderedDict()
    for c in cells or ():
        grouped[tuple(c)] = []
    for r in records:
        grouped.setdefault(r.cell, []).append(r)

    out: Dict[Cell, CellSummary] = OrderedDict()
    for cell, recs in grouped.items():
        s = CellSummary(*cell)
        steady = [r for r in recs if r.iter >= warmup]
        if steady:
            fwd = [r.fwd_ms for r in steady]
            bwd = [r.bwd_ms for r in steady]
            s.fwd_mean_ms, s.fwd_sd_ms = statistics.fmean(fwd), statistics.pstdev(fwd)
            s.bwd_mean_ms, s.bwd_sd_ms = statistics.fmean(bwd), statistics.pstdev(bwd)
            warm = [sum(r.fwd_ms + r.bwd_ms for r in run if r.iter < warmup) for run in _runs(recs)]
            s.warmup_ms = statistics.fmean(warm)
        out[cell] = s

    for (mech, mode, L), s in out.items():
        base = out.get((mech, "dynamic", L))
        if s.available and base is not None and base.available:
            s.speedup = base.total_mean_ms / s.total_mean_ms
    return list(out.values())


def _fmt(value: float, digits: int) -> str:
    return "n.a." if math.isnan(value) else f"{value:.{digits}f}"


def write_records(path, records: Iterable[BenchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.mechanism, r.graph_mode, r.seq_len, r.iter, f"{r.fwd_ms:.3f}", f"{r.bwd_ms:.3f}"])


def read_records(path) -> List[BenchRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            BenchRecord(row["mechanism"], row["graph_mode"], int(row["seq_len"]), int(row["iter"]),
                        float(row["fwd_ms"]), float(row["bwd_ms"]))
            for row in reader
        ]


def write_summary(path, summary: Iterable[CellSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([
                s.mechanism, s.graph_mode, s.seq_len,
                _fmt(s.fwd_mean_ms, 3), _fmt(s.fwd_sd_ms, 3),
                _fmt(s.bwd_mean_ms, 3), _fmt(s.bwd_sd_ms, 3),
                _fmt(s.warmup_ms / 1000.0, 6), _fmt(s.speedup, 3),
            ])


def write_plotdata(out_dir, summary: Sequence[CellSummary]) -> List[Path]:
    """One whitespace-separated table per panel: rows = seq_len, columns = series."""
    out_dir = Path(out_dir)
    series = list(OrderedDict.fromkeys((s.mechanism, s.graph_mode) for s in summary))
    lengths = sorted({s.seq_len for s in summary})
    index = {(s.mechanism, s.graph_mode, s.seq_len): s for s in summary}
    paths = []
    for panel, attr in (("fwd", "fwd_mean_ms"), ("bwd", "bwd_mean_ms")):
        lines = ["# seq_len " + " ".join(f"{m}/{g}" for m, g in series)]
        for L in lengths:
            vals = []
            for m, g in series:
                s = index.get((m, g, L))
                v = getattr(s, attr) if s is not None else math.nan
                vals.append("nan" if math.isnan(v) else f"{v:.3f}")
            lines.append(" ".join([str(L)] + vals))
        path = out_dir / f"plot_{panel}.dat"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def emit(records, summary, out_dir, formats=("csv", "plotdata")) -> List[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            write_records(out_dir / "records.csv", records)
            write_summary(out_dir / "summary.csv", summary)
            written += [out_dir / "records.csv", out_dir / "summary.csv"]
        if "plotdata" in formats:
            written += write_plotdata(out_dir, summary)
    except OSError as exc:
        raise OSError(f"cannot write benchmark output under {out_dir}: {exc}") from exc
    return written
