"""Sequential inference with a pinned-first-frame FIFO memory."""

import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensorkit as tk
from ..errors import ContractError
from ..membank import MemoryBank, compute_affinity, readout, should_memorize
from ..vosbranch import aggregate_objects_logits


@dataclass
class RunReport:
    occupancy: list = field(default_factory=list)  # bank size after each frame
    memorized: list = field(default_factory=list)  # frame indices inserted into memory
    stage_ms: dict = field(default_factory=dict)  # stage -> total wall-clock ms
    frame_scores: list = field(default_factory=list)  # filled by evaluation
    jf: float = None
    j: float = None
    f: float = None

    def add_time(self, stage, seconds):
        self.stage_ms[stage] = self.stage_ms.get(stage, 0.0) + 1000.0 * seconds

    def summary(self):
        return {"jf": self.jf, "j": self.j, "f": self.f, "occupancy": self.occupancy,
                "memorized": self.memorized, "stage_ms": {k: round(v, 3) for k, v in sorted(self.stage_ms.items())}}

    def attach_scores(self, score):
        """Copy a SequenceScore into the report (done after inference, never during it)."""
        self.frame_scores = list(score.curve)
        self.j, self.f, self.jf = score.j, score.f, score.jf
        return self

    def curve_csv(self):
        lines = ["frame,object,j,f"]
        lines += [f"{s.frame_index},{s.object_id},{s.j:.6f},{s.f:.6f}" for s in self.frame_scores]
        return "\n".join(lines) + "\n"


def object_masks(indexed, object_ids):
    return [(np.asarray(indexed) == oid).astype(np.float32)[None] for oid in object_ids]


def run_inference(model, sequence, config=None, capacity=None):
    """Segment every frame of ``sequence`` given only its first-frame annotation.

    Returns (list of indexed uint8 masks, RunReport). Only ``sequence.masks[0]``
    is read.
    """
    cfg = config or model.config
    capacity = cfg.capacity if capacity is None else capacity
    if not getattr(sequence, "annotated", True) or not len(sequence.masks):
        raise ContractError("inference needs a first-frame annotation")
    first = np.asarray(sequence.masks[0]).astype(np.uint8)
    object_ids = sorted(int(i) for i in np.unique(first) if i != 0)
    report = RunReport()
    bank = MemoryBank(capacity)
    preds = [first.copy()]
    with tk.no_record():
        t0 = time.perf_counter()
        feats = model.encode_frame(sequence.frames[0])
        report.add_time("encode", time.perf_counter() - t0)
        if object_ids:
            t0 = time.perf_counter()
            bank.insert(0, feats.query_key, model.encode_values(object_masks(first, object_ids), feats.F_res4))
            report.add_time("memorize", time.perf_counter() - t0)
            report.memorized.append(0)
        report.occupancy.append(len(bank))
        for t in range(1, len(sequence.frames)):
            if not object_ids:
                preds.append(np.zeros_like(first))
                report.occupancy.append(len(bank))
                continue
            t0 = time.perf_counter()
            feats = model.encode_frame(sequence.frames[t])
            t1 = time.perf_counter()
            aff = compute_affinity(bank, feats.query_key, cfg.topk)
            f_mem = readout(bank, aff)
            t2 = time.perf_counter()
            logits = model.decode_objects(f_mem, feats, return_logits=True)
            labels, soft = aggregate_objects_logits(logits)
            t3 = time.perf_counter()
            report.add_time("encode", t1 - t0)
            report.add_time("match", t2 - t1)
            report.add_time("decode", t3 - t2)
            out = np.zeros_like(first)
            for k, oid in enumerate(object_ids, start=1):
                out[labels == k] = oid
            preds.append(out)
            if should_memorize(t, cfg.interval):
                t0 = time.perf_counter()
                masks = [soft.data[k:k + 1] for k in range(1, len(object_ids) + 1)]
                bank.insert(t, feats.query_key, model.encode_values(masks, feats.F_res4))
                report.add_time("memorize", time.perf_counter() - t0)
                report.memorized.append(t)
            report.occupancy.append(len(bank))
    return preds, report


def occupancy_sequence(num_frames, interval, capacity):
    """Closed-form bank size after each frame under the pin + FIFO policy."""
    return [min(capacity, t // interval + 1) for t in range(num_frames)]
