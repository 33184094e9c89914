"""Wall-clock timing of the matching kernel (affinity + readout)."""

import csv
import time

import numpy as np

from .. import tensorkit as tk
from ..membank import MemoryBank, compute_affinity, readout

COLUMNS = ("memory_positions", "query_positions", "C_k", "topk", "wall_ms_affinity", "wall_ms_readout")
DEFAULT_GRID = ((16, 16, 16, 20), (64, 16, 16, 20), (256, 16, 16, 20), (256, 256, 16, 20),
                (1024, 256, 16, 20), (1024, 256, 64, 20), (1024, 256, 16, 1024))


def time_kernel(memory_positions, query_positions, c_k, topk, c_v=32, num_objects=2, repeats=5, seed=0):
    """Best-of-``repeats`` milliseconds for compute_affinity and for readout."""
    rng = np.random.default_rng(seed)
    bank = MemoryBank(1).insert(0, rng.normal(size=(c_k, memory_positions)),
                                rng.normal(size=(num_objects, c_v, memory_positions)))
    q = tk.Tensor(rng.normal(size=(c_k, query_positions)))
    t_aff, t_read = [], []
    with tk.no_record():
        for _ in range(repeats):
            t0 = time.perf_counter()
            aff = compute_affinity(bank, q, topk)
            t1 = time.perf_counter()
            readout(bank, aff)
            t2 = time.perf_counter()
            t_aff.append(t1 - t0)
            t_read.append(t2 - t1)
    return 1000 * min(t_aff), 1000 * min(t_read)


def run_bench(grid=DEFAULT_GRID, repeats=5):
    rows = []
    for m, n, ck, k in grid:
        a, r = time_kernel(m, n, ck, k, repeats=repeats)
        rows.append((m, n, ck, k, a, r))
    return rows


def write_bench_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for m, n, ck, k, a, r in rows:
        w.writerow([m, n, ck, k, f"{a:.4f}", f"{r:.4f}"])
