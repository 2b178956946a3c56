"""
Command line entry point.

    srgwdr run --config run.json [--task ... --n ... overrides]
    srgwdr make-blobs --out blobs.csv --labels-out labels.csv

A run loads a data matrix, builds the input affinity, executes one task over
a list of seeds and writes CSV, JSON and SVG outputs plus ``manifest.json``.
Exit codes: 0 success, 1 configuration or input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .affinity import input_affinity
from .barycenter import (
    feature_barycenter,
    hard_assignments,
    solve_srgw_barycenter,
    solve_srgwi,
)
from .data import make_blobs
from .errors import ConfigError, ConvergenceError, DomainError, SolverError
from .gwdr import MODELS, AdamOptions, GwdrOptions, solve_fgwdr
from .io import read_json, read_labels, read_matrix, write_json, write_matrix, write_vector
from .metrics import adjusted_rand_index, homogeneity, prototype_labels, silhouette
from .plotting import plot_alpha_grid, plot_embedding, plot_prototype_images
from .solver import STEP_POLICIES, SolverOptions

TASKS = ("cluster_srgwb", "cluster_srgwi", "gwdr", "fgwdr", "alpha_grid")
KERNELS = ("gram", "mds", "laplacian", "sne", "entropic", "sqeuclidean")
DEFAULT_ALPHAS = (
    0.0, 0.000001, 0.0003, 0.005, 0.1, 0.25, 0.5, 0.75, 0.9, 0.995, 0.9997, 0.999999, 1.0,
)


@dataclass
class RunConfig:
    input: Optional[str] = None
    labels: Optional[str] = None
    task: str = "cluster_srgwb"
    kernel: str = "mds"
    xi: float = 30.0
    k: int = 10
    n: int = 3
    d: int = 2
    model: str = "gram"
    loss: str = "l2"
    alpha: float = 0.5
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    seeds: list = field(default_factory=lambda: [0])
    solver: dict = field(default_factory=dict)
    gwdr: dict = field(default_factory=dict)
    image_shape: Optional[list] = None
    out: str = "out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def validate(self):
        if self.input is None:
            raise ConfigError("no input file given (--input or 'input' in the config)")
        if not Path(self.input).is_file():
            raise ConfigError(f"input file not found: {self.input}")
        if self.labels is not None and not Path(self.labels).is_file():
            raise ConfigError(f"labels file not found: {self.labels}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        self.loss = str(self.loss).lower()
        if self.loss not in ("l2", "kl"):
            raise ConfigError(f"loss must be l2 or kl, got {self.loss!r}")
        for name in ("n", "d", "k", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not self.alphas or any(not 0.0 <= float(a) <= 1.0 for a in self.alphas):
            raise ConfigError("alphas must be a non-empty list of values in [0, 1]")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if self.task == "alpha_grid" and self.labels is None:
            raise ConfigError("alpha_grid needs a labels file")
        if self.task == "cluster_srgwi" and self.loss == "kl":
            raise ConfigError("cluster_srgwi needs the l2 loss")
        if self.image_shape is not None and len(self.image_shape) != 2:
            raise ConfigError("image_shape must be two integers H W")
        try:
            self.solver_options(0)
            self.gwdr_options(0, 1.0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver options: {exc}") from None

    def solver_options(self, seed: int) -> SolverOptions:
        extra = dict(self.solver)
        extra.pop("seed", None)
        return SolverOptions(seed=int(seed), **extra)

    def gwdr_options(self, seed: int, alpha: float) -> GwdrOptions:
        extra = dict(self.gwdr)
        adam = {k: extra.pop(k) for k in ("lr", "beta1", "beta2", "eps") if k in extra}
        return GwdrOptions(
            solver=self.solver_options(seed),
            adam=AdamOptions(**adam),
            alpha=float(alpha),
            **extra,
        )


def _metrics(truth, labels, Z=None, T=None) -> dict:
    """Flat metrics; without truth only ``effective_clusters`` is reported."""
    out = {"effective_clusters": int(np.unique(labels).size)}
    if truth is None:
        return out
    out["ari"] = adjusted_rand_index(truth, labels)
    out["homogeneity"] = homogeneity(truth, labels)
    out["silhouette"] = None
    if Z is not None and T is not None:
        plab = prototype_labels(T, truth)
        keep = plab >= 0
        if np.unique(plab[keep]).size >= 2:
            out["silhouette"] = silhouette(Z[keep], plab[keep])
    return out


def _selection_score(m: dict) -> float:
    sil = m.get("silhouette")
    return float(m["homogeneity"]) + (0.0 if sil is None else float(sil))


def _cluster_job(args):
    cfg, C, h, truth, seed = args
    t0 = time.perf_counter()
    opts = cfg.solver_options(seed)
    if cfg.task == "cluster_srgwb":
        graph, T, report = solve_srgw_barycenter(C, h, cfg.n, cfg.loss, opts)
        structure, weights = graph.structure, graph.weights
    else:
        T, report = solve_srgwi(C, h, cfg.n, cfg.loss, opts)
        structure, weights = np.eye(cfg.n), T.sum(axis=0)
    labels = hard_assignments(T).labels
    return {
        "seed": seed,
        "labels": labels,
        "structure": structure,
        "weights": weights,
        "report": report.to_dict(),
        "metrics": _metrics(truth, labels),
        "seconds": time.perf_counter() - t0,
    }


def _dr_job(args):
    cfg, C, X, h, truth, seed, alpha = args
    t0 = time.perf_counter()
    opts = cfg.gwdr_options(seed, alpha)
    E, F, T, graph, report = solve_fgwdr(C, X, h, cfg.n, cfg.d, cfg.model, cfg.loss, opts)
    labels = hard_assignments(T).labels
    return {
        "seed": seed,
        "alpha": alpha,
        "Z": E.Z,
        "F": F,
        "T": T,
        "labels": labels,
        "weights": graph.weights,
        "report": report.to_dict(),
        "metrics": _metrics(truth, labels, E.Z, T),
        "seconds": time.perf_counter() - t0,
    }


def _run_jobs(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _aggregate(per_seed: list) -> dict:
    keys = sorted({k for m in per_seed for k, v in m.items() if v is not None})
    agg = {}
    for key in keys:
        vals = [m[key] for m in per_seed if m.get(key) is not None]
        agg[key] = {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals)),
            "median": float(np.median(vals)),
        }
    return agg


def _write_cluster(out: Path, res: dict):
    s = res["seed"]
    write_vector(out / f"labels_seed{s}.csv", res["labels"], "label")
    write_matrix(out / f"cbar_seed{s}.csv", res["structure"])
    write_vector(out / f"hbar_seed{s}.csv", res["weights"], "weight")
    write_json(out / f"metrics_seed{s}.json", res["metrics"])
    write_json(out / f"report_seed{s}.json", res["report"])


def _write_dr(out: Path, res: dict, cfg: RunConfig, X, truth, suffix: str):
    w = res["weights"]
    keep = np.flatnonzero(w > 1e-12)
    Z = res["Z"]
    header = ["prototype"] + [f"z{j + 1}" for j in range(Z.shape[1])]
    write_matrix(out / f"embedding_{suffix}.csv", np.column_stack([keep, Z[keep]]), header)
    write_matrix(out / f"weights_{suffix}.csv", np.column_stack([keep, w[keep]]), ["prototype", "weight"])
    write_vector(out / f"labels_{suffix}.csv", res["labels"], "label")
    if res["F"] is not None and float(res["alpha"]) < 1.0:
        write_matrix(out / f"features_{suffix}.csv", res["F"][keep])
    write_json(out / f"metrics_{suffix}.json", res["metrics"])
    write_json(out / f"report_{suffix}.json", res["report"])
    plab = prototype_labels(res["T"], truth) if truth is not None else None
    plot_embedding(Z, w, out / f"embedding_{suffix}.svg", labels=plab)
    if cfg.image_shape is not None:
        H, W = (int(v) for v in cfg.image_shape)
        means = feature_barycenter(X, res["T"])
        if means.shape[1] != H * W:
            raise ConfigError(f"image_shape {H}x{W} does not match {means.shape[1]} features")
        images = means.reshape(-1, H, W)
        img_dir = out / f"prototype_images_{suffix}"
        img_dir.mkdir(exist_ok=True)
        for j in keep:
            write_matrix(img_dir / f"prototype_{j}.csv", images[j])
        plot_prototype_images(images, w, out / f"prototype_images_{suffix}.svg")


def execute(cfg: RunConfig) -> dict:
    cfg.validate()
    out = Path(cfg.out)
    timings = {}

    t0 = time.perf_counter()
    X = read_matrix(cfg.input)
    truth = read_labels(cfg.labels) if cfg.labels is not None else None
    if truth is not None and truth.size != X.shape[0]:
        raise ConfigError(f"labels file has {truth.size} rows, data has {X.shape[0]}")
    if cfg.n > X.shape[0]:
        raise ConfigError(f"n = {cfg.n} exceeds the number of samples {X.shape[0]}")
    out.mkdir(parents=True, exist_ok=True)
    N = X.shape[0]
    h = np.full(N, 1.0 / N)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    C = input_affinity(X, cfg.kernel, xi=cfg.xi, k=cfg.k).values
    timings["affinity"] = time.perf_counter() - t0

    seeds = [int(s) for s in cfg.seeds]
    summary = {"task": cfg.task}
    t0 = time.perf_counter()
    if cfg.task in ("cluster_srgwb", "cluster_srgwi"):
        results = _run_jobs(_cluster_job, [(cfg, C, h, truth, s) for s in seeds], cfg.jobs)
        for res in results:
            _write_cluster(out, res)
        summary["per_seed"] = [dict(seed=r["seed"], **r["metrics"]) for r in results]
        summary["aggregate"] = _aggregate([r["metrics"] for r in results])
    elif cfg.task in ("gwdr", "fgwdr"):
        alpha = 1.0 if cfg.task == "gwdr" else float(cfg.alpha)
        jobs = [(cfg, C, X, h, truth, s, alpha) for s in seeds]
        results = _run_jobs(_dr_job, jobs, cfg.jobs)
        for res in results:
            _write_dr(out, res, cfg, X, truth, f"seed{res['seed']}")
        summary["alpha"] = alpha
        summary["per_seed"] = [dict(seed=r["seed"], **r["metrics"]) for r in results]
        summary["aggregate"] = _aggregate([r["metrics"] for r in results])
    else:
        alphas = [float(a) for a in cfg.alphas]
        jobs = [(cfg, C, X, h, truth, s, a) for a in alphas for s in seeds]
        results = _run_jobs(_dr_job, jobs, cfg.jobs)
        rows = []
        for i, a in enumerate(alphas):
            group = results[i * len(seeds):(i + 1) * len(seeds)]
            agg = _aggregate([r["metrics"] for r in group])
            row = {"alpha": a}
            for key in ("ari", "homogeneity", "silhouette"):
                row[key] = agg[key]["mean"] if key in agg else None
            row["score"] = _selection_score(row)
            rows.append(row)
        best = max(range(len(rows)), key=lambda i: (rows[i]["score"], -i))
        alpha_star = rows[best]["alpha"]
        write_matrix(
            out / "alpha_grid.csv",
            np.array([[r["alpha"], r["homogeneity"],
                       np.nan if r["silhouette"] is None else r["silhouette"],
                       r["score"]] for r in rows]),
            ["alpha", "homogeneity", "silhouette", "score"],
        )
        plot_alpha_grid(
            alphas,
            {"homogeneity": [r["homogeneity"] for r in rows],
             "silhouette": [np.nan if r["silhouette"] is None else r["silhouette"] for r in rows],
             "score": [r["score"] for r in rows]},
            out / "alpha_grid.svg",
            alpha_star=alpha_star,
        )
        summary["rows"] = rows
        summary["alpha_star"] = alpha_star
        write_json(out / "alpha_grid.json", {"rows": rows, "alpha_star": alpha_star})
    timings["solve"] = time.perf_counter() - t0
    timings["per_job"] = [r["seconds"] for r in results]

    write_json(out / "metrics.json", summary)
    write_json(
        out / "manifest.json",
        {"config": asdict(cfg), "seeds": seeds, "version": __version__, "timings": timings},
    )
    return summary


def _parse_list(text, kind=float):
    return [kind(v) for v in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srgwdr",
        description="Clustering and dimensionality reduction with semi-relaxed GW.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a task on a CSV data file")
    run.add_argument("--config", help="JSON file with RunConfig fields")
    run.add_argument("--input", help="data CSV, one sample per row")
    run.add_argument("--labels", help="ground-truth labels CSV (optional)")
    run.add_argument("--task", choices=TASKS)
    run.add_argument("--kernel", choices=KERNELS, help="input affinity")
    run.add_argument("--n", type=int, help="number of prototypes")
    run.add_argument("--d", type=int, help="embedding dimension")
    run.add_argument("--model", choices=MODELS, help="embedding similarity")
    run.add_argument("--loss", choices=("l2", "kl"))
    run.add_argument("--alpha", type=float, help="fused trade-off for fgwdr")
    run.add_argument("--grid", help="alpha grid override, e.g. '0,0.5,1'")
    run.add_argument("--seeds", help="seeds, e.g. '0,1,2'")
    run.add_argument("--xi", type=float, help="perplexity for sne/entropic kernels")
    run.add_argument("--k", type=int, help="neighbors for the laplacian kernel")
    run.add_argument("--restarts", type=int, help="solver restarts")
    run.add_argument("--step-policy", choices=STEP_POLICIES)
    run.add_argument("--image-shape", nargs=2, type=int, metavar=("H", "W"),
                     help="write per-prototype mean images of this shape")
    run.add_argument("--out", help="output directory")
    run.add_argument("--jobs", type=int, help="worker processes for seeds/grid points")

    blobs = sub.add_parser("make-blobs", help="write a Gaussian blob data set")
    blobs.add_argument("--out", required=True, help="data CSV path")
    blobs.add_argument("--labels-out", help="labels CSV path")
    blobs.add_argument("--samples", type=int, default=300)
    blobs.add_argument("--features", type=int, default=10)
    blobs.add_argument("--clusters", type=int, default=3)
    blobs.add_argument("--separation", type=float, default=10.0, help="in units of sigma")
    blobs.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args) -> RunConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = read_json(path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for key in ("input", "labels", "task", "kernel", "n", "d", "model", "loss",
                "alpha", "xi", "k", "out", "jobs", "image_shape"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    try:
        if args.seeds is not None:
            raw["seeds"] = _parse_list(args.seeds, int)
        if args.grid is not None:
            raw["alphas"] = _parse_list(args.grid, float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse list: {exc}") from None
    if args.restarts is not None or args.step_policy is not None:
        solver = dict(raw.get("solver", {}))
        if args.restarts is not None:
            solver["restarts"] = args.restarts
        if args.step_policy is not None:
            solver["step_policy"] = args.step_policy
        raw["solver"] = solver
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "make-blobs":
            X, y = make_blobs(args.samples, args.features, args.clusters,
                              args.separation, seed=args.seed)
            write_matrix(args.out, X)
            if args.labels_out:
                write_vector(args.labels_out, y, "label")
            return 0
        cfg = config_from_args(args)
        summary = execute(cfg)
    except (SolverError, ConvergenceError, DomainError, np.linalg.LinAlgError) as exc:
        # DomainError is a ValueError, so this handler comes first
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if cfg.task == "alpha_grid":
        print(f"alpha* = {summary['alpha_star']:g}")
    else:
        for key, stats in summary["aggregate"].items():
            print(f"{key}: mean {stats['mean']:.4f} std {stats['std']:.4f}")
    print(f"outputs written to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
