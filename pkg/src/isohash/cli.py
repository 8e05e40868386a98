"""Command-line entry point.

Subcommands: ``train`` (nibh | nibh-cg | lsh), ``eval`` (delta | map | tau),
``demo-fig1``, ``check`` (lemma1 | knn), ``bench``. Every command prints
exactly one JSON document to stdout (logs go to stderr), writes one run
manifest, and is deterministic given its flags and input files; wall-clock
timings appear only in the manifest and the bench report.

Exit codes: 0 success, 2 usage, 3 data error, 4 solver divergence,
5 check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import baselines, colgen, dataio, metrics, theory
from .admm import DivergenceError, SolverConfig, train_nibh
from .core import Dataset, decode_pair_indices, pair_distances, secant_count, SecantBatch

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECK_FAILED = 5


# ---------------------------------------------------------------------------
# manifest


class Manifest:
    def __init__(self, command: str, argv: list[str]):
        self.doc = {
            "command": command,
            "argv": list(argv),
            "config": {},
            "seeds": {},
            "dataset_fingerprints": {},
            "artifacts": [],
            "timings_sec": {},
        }
        self._t0 = {}

    def fingerprint(self, label: str, path: str):
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        self.doc["dataset_fingerprints"][label] = h.hexdigest()

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        yield
        self.doc["timings_sec"][name] = time.perf_counter() - t0

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2)
            fh.write("\n")


def _emit(doc: dict):
    print(json.dumps(doc, indent=2))


def _log(msg: str):
    print(msg, file=sys.stderr)


def _open_progress(spec: str | None):
    if spec is None:
        return None, lambda: None
    if spec == "-":
        return sys.stderr, lambda: None
    fh = open(spec, "w", encoding="utf-8")
    return fh, fh.close


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("ISOHASH_THREADS")
    return max(1, int(env)) if env else 1


def _load_for_training(path: str) -> Dataset:
    ds = dataio.load_any(path)
    if ds.normalized:
        return ds
    return dataio.preprocess(ds.points)


def _load_for_model(path: str, model) -> Dataset:
    ds = dataio.load_any(path)
    if ds.normalized:
        return ds
    return dataio.preprocess_for_model(ds.points, model)


def _all_secants(data: Dataset) -> SecantBatch:
    t = np.arange(secant_count(data.q), dtype=np.int64)
    i_idx, j_idx = decode_pair_indices(t)
    return SecantBatch(i_idx, j_idx, pair_distances(data.points, i_idx, j_idx))


def _select_secants(data: Dataset, spec: str, seed: int) -> SecantBatch:
    if spec == "all":
        return _all_secants(data)
    if spec == "bre":
        return dataio.bre_secant_selection(data)
    if spec.startswith("sample:"):
        k = int(spec.split(":", 1)[1])
        from .core import sample_pair_indices

        rng = np.random.default_rng(seed)
        t = sample_pair_indices(secant_count(data.q), k, rng)
        i_idx, j_idx = decode_pair_indices(t)
        return SecantBatch(i_idx, j_idx, pair_distances(data.points, i_idx, j_idx))
    raise ValueError(f"unknown secant selection {spec!r}")


# ---------------------------------------------------------------------------
# train


def cmd_train(args, parser) -> int:
    cg_flags = [args.init_sample is not None, args.violator_batch is not None,
                args.max_gens is not None]
    if args.algo != "nibh-cg" and any(cg_flags):
        parser.error(f"--init-sample/--violator-batch/--max-gens apply only "
                     f"to --algo nibh-cg, not {args.algo}")
    if args.algo != "nibh" and args.secants != "all":
        parser.error(f"--secants applies only to --algo nibh, not {args.algo}")

    man = Manifest("train", sys.argv[1:])
    man.fingerprint("data", args.data)
    man.doc["seeds"]["seed"] = args.seed

    with man.phase("load"):
        data = _load_for_training(args.data)

    solver_cfg = SolverConfig(
        rho=args.rho, eta=args.eta, alpha_start=args.alpha_start,
        alpha_end=args.alpha_end, alpha_growth=args.alpha_growth,
        max_outer_iters=args.max_iters, convergence_tol=args.tol,
        seed=args.seed,
    )
    report: dict = {
        "algo": args.algo,
        "bits": args.bits,
        "seed": args.seed,
        "out": args.out,
    }

    progress, close_progress = _open_progress(args.progress)
    try:
        diverged = False
        if args.algo == "lsh":
            with man.phase("train"):
                model = baselines.lsh_model(args.bits, data.n, args.seed, data=data)
            rep = metrics.max_distortion(model, data, n_threads=_threads(args))
            report.update({"delta": rep.delta, "lambda": model.lam, "iterations": 0})
        elif args.algo == "nibh":
            with man.phase("secants"):
                secants = _select_secants(data, args.secants, args.seed)
            with man.phase("train"):
                model, state = train_nibh(data, secants, args.bits, solver_cfg,
                                          progress=progress)
            diverged = state.diverged
            report.update({
                "delta": state.loss_history[-1][2],
                "lambda": model.lam,
                "iterations": state.iteration,
                "converged": state.converged,
                "diverged": state.diverged,
                "secants": args.secants,
                "secant_count": len(secants),
                "distance_convention": state.distance_convention,
            })
        else:  # nibh-cg
            cg_cfg = colgen.CgConfig(
                init_sample_size=args.init_sample or 5000,
                violator_batch=args.violator_batch or 2000,
                max_generations=args.max_gens or 20,
                scan_seed=args.seed,
                inner=solver_cfg,
            )
            with man.phase("train"):
                model, cg_rep = colgen.train_nibh_cg(
                    data, args.bits, cg_cfg, progress=progress,
                    n_threads=_threads(args),
                )
            rep = metrics.max_distortion(model, data, n_threads=_threads(args))
            report.update({
                "delta": rep.delta,
                "lambda": model.lam,
                "iterations": cg_rep.generations,
                "delta_hat": cg_rep.delta_hat,
                "fully_satisfied": cg_rep.fully_satisfied,
                "active_size": cg_rep.active_size,
                "peak_resident_secants": cg_rep.peak_resident_secants,
            })
    finally:
        close_progress()

    with man.phase("write"):
        dataio.save_model(model, args.out)
    man.doc["artifacts"].append(args.out)
    man.doc["config"]["solver"] = vars(solver_cfg).copy()
    man.write(args.manifest or args.out + ".manifest.json")
    _emit(report)
    return EXIT_DIVERGED if diverged else EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _read_queries(path: str | None):
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return [int(line) for line in fh.read().split()]


def cmd_eval(args, parser) -> int:
    man = Manifest("eval", sys.argv[1:])
    man.fingerprint("data", args.data)
    man.fingerprint("model", args.model)

    with man.phase("load"):
        model = dataio.load_model(args.model)
        data = _load_for_model(args.data, model)
    queries = _read_queries(args.queries)

    k = args.k
    if k is None:
        k = {"delta": 0, "map": 50, "tau": 10}[args.metric]

    with man.phase("eval"):
        if args.metric == "delta":
            rep = metrics.max_distortion(model, data, n_threads=_threads(args))
        elif args.metric == "map":
            rep = metrics.map_at_k(model, data, queries=queries, k=k)
        else:
            rep = metrics.kendall_tau_at_k(model, data, queries=queries, k=k)

    doc = metrics.report_json(args.metric, model.m, rep)
    man.write(args.manifest or "eval.manifest.json")
    _emit(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo


def cmd_demo_fig1(args, parser) -> int:
    man = Manifest("demo-fig1", sys.argv[1:])
    man.doc["seeds"]["seed"] = args.seed

    with man.phase("generate"):
        pts, labels = baselines.make_fig1_dataset(args.seed, args.grid_steps)
    with man.phase("search"):
        linf = baselines.grid_search_embedding_1d(pts, "linf", args.grid_steps)
        l2 = baselines.grid_search_embedding_1d(pts, "l2", args.grid_steps)

    linf_ok, _, _ = baselines.nn_order_preserved(pts, linf.best_angle)
    l2_ok, _, _ = baselines.nn_order_preserved(pts, l2.best_angle)

    if args.out:
        prof_path = args.out + ".profile.csv"
        proj_path = args.out + ".projections.csv"
        with open(prof_path, "w", encoding="utf-8") as fh:
            fh.write("angle_rad,linf_distortion,l2_distortion\n")
            for (ang, dv), (_, dv2) in zip(linf.profile, l2.profile):
                fh.write(f"{ang!r},{dv!r},{dv2!r}\n")
        d_linf = np.array([np.cos(linf.best_angle), np.sin(linf.best_angle)])
        d_l2 = np.array([np.cos(l2.best_angle), np.sin(l2.best_angle)])
        with open(proj_path, "w", encoding="utf-8") as fh:
            fh.write("x,y,label,proj_linf,proj_l2\n")
            for p, lab in zip(pts, labels):
                fh.write(f"{p[0]!r},{p[1]!r},{lab},{p @ d_linf!r},{p @ d_l2!r}\n")
        man.doc["artifacts"] += [prof_path, proj_path]

    doc = {
        "points": len(pts),
        "counts": {"circle": 5, "square": 5, "star": 60},
        "linf": {"angle_rad": linf.best_angle, "distortion": linf.distortion,
                 "nn_order_preserved": linf_ok},
        "l2": {"angle_rad": l2.best_angle, "distortion": l2.distortion,
               "nn_order_preserved": l2_ok},
        "circle_square_misordered_l2": baselines.circle_square_misordered(
            pts, labels, l2.best_angle),
    }
    man.write(args.manifest or "demo-fig1.manifest.json")
    _emit(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# checks


def cmd_check(args, parser) -> int:
    man = Manifest(f"check-{args.check}", sys.argv[1:])
    if args.check == "lemma1":
        man.doc["seeds"]["seed"] = args.seed
        try:
            with man.phase("check"):
                emp, bound = theory.lemma1_empirical(
                    args.alpha, args.sigma, n_samples=args.samples, seed=args.seed)
            doc = {"check": "lemma1", "alpha": args.alpha, "sigma": args.sigma,
                   "samples": args.samples, "empirical_mean": emp,
                   "bound": bound, "passed": True}
            code = EXIT_OK
        except AssertionError as exc:
            doc = {"check": "lemma1", "alpha": args.alpha, "sigma": args.sigma,
                   "samples": args.samples, "error": str(exc), "passed": False}
            code = EXIT_CHECK_FAILED
        man.write(args.manifest or "check-lemma1.manifest.json")
        _emit(doc)
        return code

    # knn sufficiency
    man.fingerprint("data", args.data)
    man.fingerprint("model", args.model)
    with man.phase("load"):
        model = dataio.load_model(args.model)
        data = _load_for_model(args.data, model)
    queries = _read_queries(args.queries)
    with man.phase("check"):
        rep = theory.knn_sufficiency_check(model, data, queries=queries, k=args.k)
    doc = {
        "check": "knn",
        "k": rep.k,
        "delta": rep.delta,
        "queries": int(rep.per_query_gap.size),
        "satisfied_queries": [int(x) for x in rep.satisfied_queries],
        "gaps": [float(g) for g in rep.per_query_gap],
        "preserved": [bool(b) for b in rep.preserved],
        "passed": rep.ok,
    }
    man.write(args.manifest or "check-knn.manifest.json")
    _emit(doc)
    return EXIT_OK if rep.ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args, parser) -> int:
    man = Manifest("bench", sys.argv[1:])
    man.doc["seeds"]["seed"] = args.seed
    qs = [int(x) for x in args.q.split(",")]
    runs = []
    for q in qs:
        timings = {}
        t0 = time.perf_counter()
        raw = dataio.gen_random_dataset(q, args.dims, seed=args.seed)
        timings["generate"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        data = dataio.preprocess(raw.points)
        timings["preprocess"] = time.perf_counter() - t0
        run = {"q": q, "pairs": secant_count(q)}
        t0 = time.perf_counter()
        if args.algo == "lsh":
            baselines.lsh_model(args.bits, data.n, args.seed, data=data)
        elif args.algo == "nibh":
            secants = _all_secants(data)
            train_nibh(data, secants, args.bits,
                       SolverConfig(seed=args.seed, max_outer_iters=args.max_iters))
        else:
            cfg = colgen.CgConfig(
                scan_seed=args.seed,
                inner=SolverConfig(seed=args.seed, max_outer_iters=args.max_iters),
            )
            _, rep = colgen.train_nibh_cg(data, args.bits, cfg,
                                          n_threads=_threads(args))
            run["peak_resident_secants"] = rep.peak_resident_secants
            run["generations"] = rep.generations
        timings["train"] = time.perf_counter() - t0
        run["phases_sec"] = timings
        runs.append(run)
        _log(f"bench q={q}: train {timings['train']:.3f}s")
    man.doc["timings_sec"] = {f"q{r['q']}": r["phases_sec"]["train"] for r in runs}
    man.write(args.manifest or "bench.manifest.json")
    _emit({"algo": args.algo, "bits": args.bits, "runs": runs})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="isohash",
        description="Binary hashing by worst-case distance-distortion "
                    "minimization: training, evaluation, demos, checks.",
    )
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for parallel scans "
                        "(default: ISOHASH_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a hashing model")
    t.add_argument("--data", required=True)
    t.add_argument("--algo", choices=["nibh", "nibh-cg", "lsh"], default="nibh")
    t.add_argument("--bits", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--rho", type=float, default=1.0)
    t.add_argument("--eta", type=float, default=1.6)
    t.add_argument("--alpha-start", type=float, default=1.0)
    t.add_argument("--alpha-end", type=float, default=10.0)
    t.add_argument("--alpha-growth", type=float, default=1.25)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--secants", default="all",
                   help="nibh secant selection: all | bre | sample:K")
    t.add_argument("--init-sample", type=int, default=None)
    t.add_argument("--violator-batch", type=int, default=None)
    t.add_argument("--max-gens", type=int, default=None)
    t.add_argument("--tol", type=float, default=1e-5)
    t.add_argument("--max-iters", type=int, default=100)
    t.add_argument("--progress", default=None,
                   help="JSON-lines progress sink path, or - for stderr")
    t.add_argument("--manifest", default=None)

    e = sub.add_parser("eval", help="evaluate a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=["delta", "map", "tau"], required=True)
    e.add_argument("--k", type=int, default=None,
                   help="neighbor count (default: 50 for map, 10 for tau)")
    e.add_argument("--queries", default=None,
                   help="file of query indices, one per line (default: all)")
    e.add_argument("--manifest", default=None)

    d = sub.add_parser("demo-fig1", help="worst-case vs average 1-D embedding demo")
    d.add_argument("--seed", type=int, default=baselines.DEMO_DATASET_SEED)
    d.add_argument("--grid-steps", type=int, default=baselines.DEFAULT_GRID_STEPS)
    d.add_argument("--out", default=None, help="prefix for CSV outputs")
    d.add_argument("--manifest", default=None)

    c = sub.add_parser("check", help="run an executable theory check")
    csub = c.add_subparsers(dest="check", required=True)
    c1 = csub.add_parser("lemma1")
    c1.add_argument("--alpha", type=float, required=True)
    c1.add_argument("--sigma", type=float, required=True)
    c1.add_argument("--samples", type=int, default=10**6)
    c1.add_argument("--seed", type=int, default=0)
    c1.add_argument("--manifest", default=None)
    c2 = csub.add_parser("knn")
    c2.add_argument("--model", required=True)
    c2.add_argument("--data", required=True)
    c2.add_argument("--k", type=int, default=5)
    c2.add_argument("--queries", default=None)
    c2.add_argument("--manifest", default=None)

    b = sub.add_parser("bench", help="time training phases at several Q")
    b.add_argument("--q", default="100,300,1000", help="comma-separated sizes")
    b.add_argument("--bits", type=int, default=16)
    b.add_argument("--dims", type=int, default=100)
    b.add_argument("--algo", choices=["nibh", "nibh-cg", "lsh"], default="nibh-cg")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--max-iters", type=int, default=30)
    b.add_argument("--manifest", default=None)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "demo-fig1": cmd_demo_fig1,
        "check": cmd_check,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args, parser)
    except (dataio.DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except DivergenceError as exc:
        _log(f"solver divergence: {exc}")
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
