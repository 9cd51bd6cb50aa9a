"""Command-line entry point: ``idcorr {synth,denoise,eval,bench,distill-toy}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

import numpy as np

from . import distill
from .core import PipelineConfig
from .crossvideo_denoise import expected_evaluations
from .dataset_io import (
    NO_IDENTITY,
    load_dataset,
    read_dataset,
    read_truth,
    write_dataset,
    write_truth,
)
from .errors import IdCorrError
from .linking import close_pairs
from .pipeline import STAGES, default_threads, run_pipeline
from .synthworld import WorldSpec, evaluate, generate

log = logging.getLogger("idcorr")

EXIT_DATA = 3
EXIT_IO = 4
EXIT_CHECK = 5


def _fail(code: int, exc: BaseException) -> int:
    msg = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(msg), file=sys.stderr)
    return code


def _write_json(path, doc) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def cmd_synth(args) -> int:
    spec = WorldSpec(
        n_identities=args.identities,
        n_videos=args.videos,
        tracklets_per_video=args.tracklets_per_video,
        samples_per_tracklet=args.samples_per_tracklet,
        dim=args.dim,
        intra_spread=args.spread,
        contamination_rate=args.contamination,
        cross_video_recurrence=args.recurrence,
        seed=args.seed,
        recurrence_lookback=args.lookback,
    )
    world = generate(spec)
    write_dataset(args.output, world.dataset)
    truth = args.truth or f"{args.output}.truth.json"
    write_truth(truth, world.identity)
    log.info("wrote %d samples to %s, truth to %s", len(world.dataset), args.output, truth)
    return 0


def _stage_rows(result, truth):
    rows = []
    for name, labels in result.stage_labels.items():
        r = evaluate(labels, truth)
        rows.append([name, r.pairwise_precision, r.pairwise_recall, r.pairwise_f1, r.identity_count_found])
    return rows


def cmd_denoise(args) -> int:
    config = PipelineConfig(
        sigma_cst=args.sigma_cst,
        sigma_drm=args.sigma_drm,
        sliding_half_width=args.sliding_range,
        min_tracklet_size=args.min_tracklet_size,
    )
    dataset = load_dataset(args.input)
    result = run_pipeline(
        dataset,
        config,
        stage=args.stage,
        threads=args.threads or default_threads(),
        noise=not args.no_noise,
        noise_cap=args.noise_cap,
        edge_distances=bool(args.dump_edges),
    )
    write_dataset(args.output, dataset, tracklet_ids=result.labels)
    report = result.report
    report["input_path"] = str(args.input)
    report["output_path"] = str(args.output)

    if args.dump_edges and result.graph is not None:
        graph = result.graph
        with open(args.dump_edges, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["i", "c", "distance"])
            for (i, c), d in zip(graph.edges.tolist(), graph.distances.tolist()):
                w.writerow([i, c, repr(d)])

    if args.truth:
        truth = read_truth(args.truth)
        rows = _stage_rows(result, truth)
        report["stage_metrics"] = [
            dict(zip(["stage", "precision", "recall", "f1", "identities"], r)) for r in rows
        ]
        if args.stage_csv:
            with open(args.stage_csv, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["stage", "precision", "recall", "f1", "identities"])
                w.writerows(rows)

    _write_json(args.report or f"{args.output}.report.json", report)
    summary = {k: report[k] for k in ("samples_in", "samples_out", "samples_discarded", "output_identities")}
    print(json.dumps(summary))
    return 0


def _load_labels(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Labels (and features when available) from a dataset file or a truth JSON."""
    with open(path, "rb") as f:
        head = f.read(1)
    if head in (b"{", b"["):
        return read_truth(path), None
    ds = read_dataset(path)
    labels = ds.tracklet_ids.copy()
    labels[labels == NO_IDENTITY] = -1
    return labels, ds.features


def cmd_eval(args) -> int:
    predicted, features = _load_labels(args.predicted)
    truth = read_truth(args.truth)
    config = PipelineConfig(sigma_cst=args.sigma_cst, sigma_drm=args.sigma_drm)
    report = evaluate(
        predicted, truth, config, features=features if args.noise else None
    )
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    n_max, r_s = args.n_tracklets, args.sliding_range
    sizes = [max(r_s + 1, n_max >> k) for k in range(args.steps - 1, -1, -1)]
    n_ids = max(2, n_max // 8)
    protos = rng.normal(size=(n_ids, args.dim))
    centroids = protos[rng.integers(n_ids, size=n_max)] + 0.1 * rng.normal(size=(n_max, args.dim))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow([
        "n", "r_s", "sliding_evaluations", "expected_sliding", "brute_evaluations",
        "expected_brute", "sliding_ms", "brute_ms", "time_ratio",
    ])
    ok = True
    for n in sizes:
        c = centroids[:n]
        t0 = time.perf_counter()
        _, sliding = close_pairs(c, args.sigma_drm, window=r_s)
        t1 = time.perf_counter()
        _, brute = close_pairs(c, args.sigma_drm)
        t2 = time.perf_counter()
        expect_s, expect_b = expected_evaluations(n, r_s), n * (n - 1) // 2
        ok &= sliding == expect_s and brute == expect_b
        ts, tb = (t1 - t0) * 1000, (t2 - t1) * 1000
        w.writerow([n, r_s, sliding, expect_s, brute, expect_b, f"{ts:.3f}", f"{tb:.3f}", f"{ts / tb:.4f}"])
    if not ok:
        print(json.dumps({"error": "CountMismatch", "message": "evaluation counts differ from closed form"}),
              file=sys.stderr)
        return EXIT_CHECK
    return 0


def cmd_distill_toy(args) -> int:
    initial, schedule = distill.parse_schedule(args.nid_schedule)
    cfg = distill.ToyConfig(
        tau_s=args.tau_s,
        tau_t=args.tau_t,
        ema_momentum=args.ema,
        center_momentum=args.center_momentum,
        initial_nid=initial,
        schedule=schedule,
    )
    data = distill.make_toy_data(n_identities=args.identities, seed=args.seed)
    trace = distill.toy_train(data, args.epochs, args.seed, cfg)
    text = trace.to_csv()
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    print(json.dumps({
        "initial_precision_at_1": trace.initial_precision_at_1,
        "final_precision_at_1": trace.rows[-1].precision_at_1 if trace.rows else None,
    }), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idcorr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = WorldSpec()
    s = sub.add_parser("synth", help="generate a synthetic world")
    s.add_argument("output")
    s.add_argument("--identities", type=int, default=d.n_identities)
    s.add_argument("--videos", type=int, default=d.n_videos)
    s.add_argument("--tracklets-per-video", type=int, default=d.tracklets_per_video)
    s.add_argument("--samples-per-tracklet", type=int, default=d.samples_per_tracklet)
    s.add_argument("--dim", type=int, default=d.dim)
    s.add_argument("--spread", type=float, default=d.intra_spread)
    s.add_argument("--contamination", type=float, default=d.contamination_rate)
    s.add_argument("--recurrence", type=float, default=d.cross_video_recurrence)
    s.add_argument("--lookback", type=int, default=None)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--truth", help="truth sidecar path (default OUTPUT.truth.json)")
    s.set_defaults(func=cmd_synth)

    c = PipelineConfig()
    n = sub.add_parser("denoise", help="run the denoising pipeline")
    n.add_argument("input")
    n.add_argument("output")
    n.add_argument("--sigma-cst", type=float, default=c.sigma_cst)
    n.add_argument("--sigma-drm", type=float, default=c.sigma_drm)
    n.add_argument("--sliding-range", type=int, default=c.sliding_half_width)
    n.add_argument("--min-tracklet-size", type=int, default=c.min_tracklet_size)
    n.add_argument("--report", help="run report path (default OUTPUT.report.json)")
    n.add_argument("--dump-edges", help="write cross-video link edges as CSV")
    n.add_argument("--threads", type=int, default=None, help="worker threads (env CION_THREADS)")
    n.add_argument("--stage", choices=[*STAGES, "all"], default="all")
    n.add_argument("--no-noise", action="store_true", help="skip per-stage noise reports")
    n.add_argument("--noise-cap", type=int, default=10000)
    n.add_argument("--truth", help="truth sidecar; adds per-stage recovery metrics")
    n.add_argument("--stage-csv", help="with --truth, write per-stage metrics as CSV")
    n.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", help="score a labeling against truth")
    e.add_argument("predicted", help="denoise output file or truth-style JSON")
    e.add_argument("truth")
    e.add_argument("--sigma-cst", type=float, default=c.sigma_cst)
    e.add_argument("--sigma-drm", type=float, default=c.sigma_drm)
    e.add_argument("--noise", action="store_true", help="attach noise reports")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="sliding-range vs all-pairs linking")
    b.add_argument("--n-tracklets", type=int, default=5000)
    b.add_argument("--sliding-range", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--steps", type=int, default=3, help="number of halvings of N to time")
    b.add_argument("--sigma-drm", type=float, default=c.sigma_drm)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("distill-toy", help="toy identity-guided self-distillation run")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--identities", type=int, default=10)
    t.add_argument("--nid-schedule", default="2,0.4:4,0.6:6,0.8:8")
    t.add_argument("--tau-s", type=float, default=distill.TAU_S)
    t.add_argument("--tau-t", type=float, default=distill.TAU_T)
    t.add_argument("--ema", type=float, default=distill.EMA_MOMENTUM)
    t.add_argument("--center-momentum", type=float, default=distill.CENTER_MOMENTUM)
    t.add_argument("-o", "--output", help="trace CSV path (default stdout)")
    t.set_defaults(func=cmd_distill_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except IdCorrError as exc:
        return _fail(EXIT_DATA, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
