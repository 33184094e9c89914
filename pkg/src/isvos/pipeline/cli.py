"""Command-line entry point: synth, train, run, eval, bench, gradcheck, sweep.

Exit codes: 0 success, 1 contract error or bad usage, 2 I/O or parse error.
"""

import argparse
import contextlib
import csv
import json
import os
import sys

from ..errors import ContractError, NonFiniteError, ParseError
from ..metrics import sequence_eval
from ..synthvid import SceneSpec, generate_sequence, read_masks, read_sequence, write_masks, write_sequence
from .config import ModelConfig

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_model_flags(p):
    p.add_argument("--no-qe", action="store_true", help="disable query enhancement of the key")
    p.add_argument("--no-mpf", action="store_true", help="drop the pixel-decoder path of the mask decoder")


def build_parser():
    common = Parser(add_help=False)
    # SUPPRESS keeps a subcommand's unset flag from clobbering one given before it
    common.add_argument("--config", default=argparse.SUPPRESS, help="ModelConfig JSON file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the config seed")
    p = Parser(prog="isvos", description="Desk-scale memory-based video object segmentation.",
               parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--objects", type=int, default=2)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--background", default="noise")

    s = sub.add_parser("train", parents=[common], help="overfit-train a model")
    s.add_argument("--data", action="append", help="sequence directory (repeatable); synthesised from --seed if absent")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--out", required=True, help="model .npz")
    s.add_argument("--loss-csv")
    _add_model_flags(s)

    s = sub.add_parser("run", parents=[common], help="segment a sequence from its first-frame mask")
    s.add_argument("--model", help="trained .npz; a freshly initialised model if absent")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    _add_model_flags(s)

    s = sub.add_parser("eval", parents=[common], help="score predicted masks against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--csv", help="per-frame CSV path (default: stdout)")

    s = sub.add_parser("bench", parents=[common], help="time the matching kernel")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--repeats", type=int, default=5)

    s = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference suite")
    s.add_argument("--only", nargs="*", help="check names")

    s = sub.add_parser("sweep", parents=[common], help="J&F versus memory capacity")
    s.add_argument("--model")
    s.add_argument("--data", help="sequence directory; a 40-frame synthetic one if absent")
    s.add_argument("--sizes", default="1,2,4,8,16")
    s.add_argument("--out", required=True)
    _add_model_flags(s)
    return p


def _config(args):
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "no_qe", False):
        over["use_qe"] = False
    if getattr(args, "no_mpf", False):
        over["use_mpf"] = False
    return cfg.replace(**over) if over else cfg


def _model(args, cfg):
    from .model import ISVOS
    if getattr(args, "model", None):
        over = {k: getattr(cfg, k) for k in ("use_qe", "use_mpf") if not getattr(cfg, k)}
        return ISVOS.load(args.model, **over)
    return ISVOS(cfg)


def cmd_synth(args, out):
    seed = 0 if args.seed is None else args.seed
    spec = SceneSpec(seed=seed, num_objects=args.objects, num_frames=args.frames, image_size=args.size,
                     background=args.background)
    write_sequence(generate_sequence(spec), args.out)
    print(f"wrote {args.frames} frames to {args.out}", file=out)


def cmd_train(args, out):
    from .model import ISVOS
    from .train import train_toy
    cfg = _config(args)
    if args.data:
        data = [read_sequence(d) for d in args.data]
    else:
        data = [generate_sequence(SceneSpec(seed=cfg.seed, image_size=cfg.image_size))]
    model = ISVOS(cfg)

    def log(step, res):
        if step % 50 == 0 or step == args.steps - 1:
            print(f"step {step:4d} loss {res.losses[-1]:.4f} vos {res.vos[-1]:.4f} inst {res.inst[-1]:.4f}",
                  file=out)
    res = train_toy(model, data, cfg, steps=args.steps, log=log)
    model.save(args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "vos", "inst", "grad_norm"])
            for i, row in enumerate(zip(res.losses, res.vos, res.inst, res.grad_norms)):
                w.writerow([i] + [f"{v:.6f}" for v in row])
    print(f"saved {args.out}", file=out)


def cmd_run(args, out):
    from .inference import run_inference
    cfg = _config(args)
    model = _model(args, cfg)
    seq = read_sequence(args.data)
    preds, report = run_inference(model, seq, model.config)
    write_masks(os.path.join(args.out, "masks"), preds)
    if len(seq.masks) == len(preds) > 1:
        report.attach_scores(sequence_eval(preds, seq.masks))
        with open(os.path.join(args.out, "curve.csv"), "w") as fh:
            fh.write(report.curve_csv())
        print(f"J&F {report.jf:.4f}", file=out)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report.summary(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(preds)} masks to {args.out}", file=out)


def cmd_eval(args, out):
    pred, gt = read_masks(args.pred), read_masks(args.gt)
    score = sequence_eval(pred, gt)
    print(f"{'object':>6} {'J':>8} {'F':>8} {'J&F':>8}", file=out)
    for oid, (j, f) in sorted(score.per_object.items()):
        print(f"{oid:>6} {j:8.4f} {f:8.4f} {(j + f) / 2:8.4f}", file=out)
    print(f"J {score.j:.4f}  F {score.f:.4f}  J&F {score.jf:.4f}", file=out)
    with (open(args.csv, "w", newline="") if args.csv else contextlib.nullcontext(out)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "object", "j", "f"])
        for s in score.curve:
            w.writerow([s.frame_index, s.object_id, f"{s.j:.6f}", f"{s.f:.6f}"])


def cmd_bench(args, out):
    from .bench import run_bench, write_bench_csv
    rows = run_bench(repeats=args.repeats)
    with (open(args.out, "w", newline="") if args.out else contextlib.nullcontext(out)) as fh:
        write_bench_csv(rows, fh)


def cmd_gradcheck(args, out):
    from .gradsuite import CHECKS, TOLERANCE, run_suite
    unknown = set(args.only or []) - set(CHECKS)
    if unknown:
        raise ContractError(f"unknown checks: {sorted(unknown)}")
    results = run_suite(args.only)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:26s} rel_err {r.error:.3e}  {r.seconds:.2f}s", file=out)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks within {TOLERANCE:g}", file=out)
    return EXIT_CONTRACT if failed else EXIT_OK


def cmd_sweep(args, out):
    from .sweep import memory_size_sweep
    cfg = _config(args)
    model = _model(args, cfg)
    if args.data:
        seq = read_sequence(args.data)
    else:
        seq = generate_sequence(SceneSpec(seed=cfg.seed, num_frames=40, image_size=cfg.image_size))
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError as exc:
        raise ContractError(f"bad --sizes {args.sizes!r}") from exc
    table = memory_size_sweep(model, seq, sizes, model.config)
    table.write_csv(args.out)
    for r in table.rows:
        print(f"capacity {r.capacity:3d}  J&F {r.jf:.4f}", file=out)
    print(f"monotone in capacity: {'yes' if table.monotone else 'no'}", file=out)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "run": cmd_run, "eval": cmd_eval, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck, "sweep": cmd_sweep}


def _thread_limit():
    n = os.environ.get("ISVOS_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        args.config = getattr(args, "config", None)
        args.seed = getattr(args, "seed", None)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONTRACT
    try:
        with _thread_limit():
            code = COMMANDS[args.command](args, out)
        return EXIT_OK if code is None else code
    except (ContractError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, ParseError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
