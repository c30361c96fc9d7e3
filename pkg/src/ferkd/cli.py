"""Command-line entry point.

One subcommand per pipeline stage; every input file stays untouched and
every output goes to a new file.  Failures print a single JSON line to
stderr: usage problems exit 2 (argparse's convention), data or state
problems exit 1.  Set FERKD_LOG=debug for chatty progress output.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import replace

from . import bench as bench_mod
from .bench import reference
from .calibrate import CalibrationConfig, calibrate_store
from .ensemble import LABEL_POLICIES, VOTE_MODES, TeacherSet, ensemble_stores
from .errors import FerkdError, ParameterError
from .labels import DEFAULT_BIN_EDGES, bin_statistics
from .rng import spawn
from .sampler import OrderMode, OrderPolicy, SamplerConfig
from .selfmix import plan_selfmix
from .server import serve as bind_server
from .store import ingest_predictions, read_store, summary, write_store

log = logging.getLogger("ferkd")

_SERVE_ORDERS = {
    "random": OrderMode.RANDOM,
    "surgical": OrderMode.SURGICAL,
    "e2h": OrderMode.EASY_TO_HARD,
    "h2e": OrderMode.HARD_TO_EASY,
}


def _parse_seeds(text: str) -> list[int]:
    """Seed lists come as '0,1,2' or an inclusive range '0..4'."""
    text = text.strip()
    if ".." in text:
        lo_txt, _, hi_txt = text.partition("..")
        lo, hi = int(lo_txt), int(hi_txt)
        if hi < lo:
            raise ParameterError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    seeds = [int(p) for p in text.split(",") if p.strip()]
    if not seeds:
        raise ParameterError("need at least one seed")
    return seeds


def _parse_modes(text: str) -> list[str]:
    modes = [p.strip() for p in text.split(",") if p.strip()]
    for m in modes:
        if m not in bench_mod.MODES:
            raise ParameterError(f"unknown mode {m!r}, expected one of {bench_mod.MODES}")
    if not modes:
        raise ParameterError("need at least one mode")
    return modes


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _calibration_from_args(args) -> CalibrationConfig:
    return CalibrationConfig(
        t_low=args.t_low, t_mid=args.t_mid, t_top=args.t_top, epsilon=args.epsilon
    )


def _add_calibration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-low", type=float, default=0.15, help="discard below this max-probability")
    p.add_argument("--t-mid", type=float, default=0.30, help="relabel below this, keep above")
    p.add_argument("--t-top", type=float, default=0.95, help="discard above this")
    p.add_argument("--epsilon", type=float, default=0.1, help="smoothing for relabeled crops")


def _cmd_ingest(args) -> int:
    with open(args.dump, "r", encoding="utf-8") as fh:
        store = ingest_predictions(
            fh, num_classes=args.classes, top_k=args.top_k, bits=args.bits
        )
    n = write_store(store, args.out)
    _emit({"out": args.out, "bytes": n, "images": store.num_images, "crops": store.num_crops})
    return 0


def _cmd_sample(args) -> int:
    task = bench_mod.generate_task(args.seed, (args.train, args.val), args.classes)
    teacher = bench_mod.OracleTeacher(seed=args.teacher_seed, noise_scale=args.noise_scale)
    store = bench_mod.build_store(
        task,
        teacher,
        crops_per_image=args.crops,
        sampler_cfg=SamplerConfig(scale_min=args.scale_min, scale_max=args.scale_max),
        top_k=args.top_k,
        bits=args.bits,
    )
    n = write_store(store, args.out)
    _emit({"out": args.out, "bytes": n, "images": store.num_images, "crops": store.num_crops})
    return 0


def _cmd_calibrate(args) -> int:
    store = read_store(args.store)
    cfg = _calibration_from_args(args)
    calibrated, report = calibrate_store(store, cfg)
    n = write_store(calibrated, args.out)
    counts = {status.name: count for status, count in report.counts.items()}
    _emit(
        {
            "out": args.out,
            "bytes": n,
            "counts": counts,
            "discard_fraction": round(report.discard_fraction, 6),
        }
    )
    return 0


def _cmd_ensemble(args) -> int:
    stores = {path: read_store(path) for path in args.stores}
    merged = ensemble_stores(
        TeacherSet(stores),
        _calibration_from_args(args),
        vote=args.vote,
        label_policy=args.label_policy,
    )
    n = write_store(merged, args.out)
    _emit({"out": args.out, "bytes": n, "teachers": len(stores), "crops": merged.num_crops})
    return 0


def _cmd_stats(args) -> int:
    store = read_store(args.store)
    labels = [rec.recovered() for rec in store.records()]
    stats = bin_statistics(labels, DEFAULT_BIN_EDGES)
    edges = stats.bin_edges
    print("bin             ratio%     agg%")
    for i, (ratio, agg) in enumerate(zip(stats.bin_ratio, stats.agg_ratio)):
        closing = "]" if i == len(stats.bin_ratio) - 1 else ")"
        span = f"[{edges[i]:.2f}, {edges[i + 1]:.2f}{closing}"
        print(f"{span:<14} {100.0 * ratio:8.2f} {100.0 * agg:8.2f}")
    info = summary(store)
    print(
        f"images {info['num_images']}  crops {info['num_crops']}  "
        f"calibrated {'yes' if info['calibrated'] else 'no'}"
    )
    if info["calibrated"]:
        c = info["status_counts"]
        print(f"UR {c['UR']}  HR {c['HR']}  IR {c['IR']}")
    return 0


def _cmd_selfmix_preview(args) -> int:
    store = read_store(args.store)
    image_ids = [args.image] if args.image else sorted(store.entries)
    print("# image_id index_a index_b x y w h lambda_eff")
    for image_id in image_ids:
        if image_id not in store.entries:
            raise ParameterError(f"no image {image_id!r} in the store")
        stream = spawn(args.seed, "selfmix", image_id)
        for plan in plan_selfmix(list(store.entries[image_id]), stream, args.beta_alpha):
            b = plan.paste_box
            print(
                f"{plan.image_id} {plan.index_a} {plan.index_b} "
                f"{b.x:.6f} {b.y:.6f} {b.w:.6f} {b.h:.6f} {plan.lambda_eff:.6f}"
            )
    return 0


def _cmd_bench(args) -> int:
    modes = _parse_modes(args.modes)
    seeds = _parse_seeds(args.seeds)
    log.info("generating task (%d train / %d val images)", args.train, args.val)
    task = bench_mod.generate_task(args.task_seed, (args.train, args.val), args.classes)
    teacher = bench_mod.OracleTeacher(seed=args.teacher_seed, noise_scale=args.noise_scale)
    store = bench_mod.build_store(
        task,
        teacher,
        crops_per_image=args.crops,
        sampler_cfg=SamplerConfig(scale_min=args.scale_min, scale_max=args.scale_max),
    )
    store, _ = calibrate_store(store, _calibration_from_args(args))
    base = bench_mod.TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        selfmix=args.selfmix,
        beta_alpha=args.beta_alpha,
        min_prob=args.min_prob,
        max_prob=args.max_prob,
        eval_every=args.eval_every,
        hidden=args.hidden,
        alpha=args.alpha,
    )
    grid = [(m, s) for m in modes for s in seeds]
    if args.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(
                pool.map(
                    lambda ms: bench_mod.run_experiment(
                        replace(base, mode=ms[0], seed=ms[1]), task, store
                    ),
                    grid,
                )
            )
    else:
        results = [
            bench_mod.run_experiment(replace(base, mode=m, seed=s), task, store)
            for m, s in grid
        ]
    if args.out == "-":
        for line in bench_mod.format_metrics(results):
            print(line)
    else:
        rows = bench_mod.write_metrics(results, args.out)
        means = {
            m: round(
                sum(r.final_accuracy for r in results if r.mode == m)
                / sum(1 for r in results if r.mode == m),
                6,
            )
            for m in modes
        }
        _emit({"out": args.out, "rows": rows, "mean_final_accuracy": means})
    return 0


def _cmd_serve(args) -> int:
    store = read_store(args.store)
    policy = OrderPolicy(mode=_SERVE_ORDERS[args.order])
    server = bind_server(store, host=args.host, port=args.port, policy=policy)
    _emit(
        {
            "host": server.server_address[0],
            "port": server.port,
            "crops": len(server.kept),
        }
    )
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ferkd", description="soft-label pipeline: sample, calibrate, ensemble, serve"
    )
    parser.add_argument(
        "--workers", type=int, default=1, help="parallel runs where a command supports it"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a store from a teacher prediction dump")
    p.add_argument("--dump", required=True, help="line-oriented predictions file")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("sample", help="generate a synthetic task store with oracle labels")
    p.add_argument("--train", type=int, default=reference.TRAIN_IMAGES)
    p.add_argument("--val", type=int, default=reference.VAL_IMAGES)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--crops", type=int, default=reference.CROPS_PER_IMAGE)
    p.add_argument("--seed", type=int, default=reference.TASK_SEED)
    p.add_argument("--teacher-seed", type=int, default=reference.TEACHER_SEED)
    p.add_argument("--noise-scale", type=float, default=reference.TEACHER_NOISE)
    p.add_argument("--scale-min", type=float, default=reference.CROP_SCALE_MIN)
    p.add_argument("--scale-max", type=float, default=reference.CROP_SCALE_MAX)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("calibrate", help="assign region statuses and relabel")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    _add_calibration_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("ensemble", help="merge aligned stores from several teachers")
    p.add_argument("--stores", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vote", choices=VOTE_MODES, default="majority")
    p.add_argument("--label-policy", choices=LABEL_POLICIES, default="ir_only")
    _add_calibration_flags(p)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("stats", help="max-probability histogram of a store")
    p.add_argument("--store", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("selfmix-preview", help="show the mix plans for a store's images")
    p.add_argument("--store", required=True)
    p.add_argument("--image", default=None, help="restrict to one image id")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta-alpha", type=float, default=1.0)
    p.set_defaults(func=_cmd_selfmix_preview)

    p = sub.add_parser("bench", help="train the desk-scale student under several modes")
    p.add_argument("--modes", default="fkd_random,ferkd_surgical")
    p.add_argument("--seeds", default="0", help="'0,1,2' or inclusive '0..4'")
    p.add_argument("--train", type=int, default=reference.TRAIN_IMAGES)
    p.add_argument("--val", type=int, default=reference.VAL_IMAGES)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--crops", type=int, default=reference.CROPS_PER_IMAGE)
    p.add_argument("--task-seed", type=int, default=reference.TASK_SEED)
    p.add_argument("--teacher-seed", type=int, default=reference.TEACHER_SEED)
    p.add_argument("--noise-scale", type=float, default=reference.TEACHER_NOISE)
    p.add_argument("--scale-min", type=float, default=reference.CROP_SCALE_MIN)
    p.add_argument("--scale-max", type=float, default=reference.CROP_SCALE_MAX)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--selfmix", action="store_true")
    p.add_argument("--beta-alpha", type=float, default=1.0)
    p.add_argument("--min-prob", type=float, default=0.0)
    p.add_argument("--max-prob", type=float, default=1.0)
    p.add_argument("--out", default="-", help="metrics file, '-' for stdout")
    _add_calibration_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve", help="serve batches from a calibrated store over TCP")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--order", choices=sorted(_SERVE_ORDERS), default="random")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FERKD_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print(json.dumps({"error": "ParameterError", "message": "--workers must be >= 1"}), file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FerkdError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
