"""Memory-capacity sweep: J&F of one sequence as the bank capacity grows."""

import csv
from dataclasses import dataclass

from ..metrics import sequence_eval
from .inference import run_inference

DEFAULT_SIZES = (1, 2, 4, 8, 16)


@dataclass
class SweepRow:
    capacity: int
    jf: float
    j: float
    f: float
    memorized: int  # frames inserted over the run
    peak_occupancy: int


@dataclass
class SweepTable:
    rows: list

    @property
    def monotone(self):
        """True when J&F never decreases with capacity (reported, never enforced)."""
        vals = [r.jf for r in sorted(self.rows, key=lambda r: r.capacity)]
        return all(b >= a for a, b in zip(vals, vals[1:]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["capacity", "jf", "j", "f", "memorized", "peak_occupancy"])
            for r in self.rows:
                w.writerow([r.capacity, f"{r.jf:.6f}", f"{r.j:.6f}", f"{r.f:.6f}", r.memorized, r.peak_occupancy])


def memory_size_sweep(model, sequence, sizes=DEFAULT_SIZES, config=None):
    """Run inference once per capacity and score it against the sequence's masks."""
    sizes = sorted(set(int(s) for s in sizes) | {1})
    rows = []
    for cap in sizes:
        preds, report = run_inference(model, sequence, config, capacity=cap)
        score = sequence_eval(preds, sequence.masks)
        rows.append(SweepRow(cap, score.jf, score.j, score.f, len(report.memorized), max(report.occupancy)))
    return SweepTable(rows)
