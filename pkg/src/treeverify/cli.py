"""Command-line front end: ``treeverify --model M --data D [options]``."""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .clique import DEFAULT_CAP
from .ensemble import Ensemble, ModelFormatError, load_model
from .formats import (
    SCHEMA_VERSION,
    DataFormatError,
    dump_report,
    emit_importance_map,
    normalize_binary_labels,
    read_libsvm,
    report_csv,
)
from .single_tree import verify_tree_linear
from .verifier import VerificationReport, VerifyConfig, certify, find_anchors, feature_importance

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_DATA = 4
EXIT_IO = 5
EXIT_CONFIG = 6

MODES = ("verify", "exact", "single-tree", "importance", "anchor")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model_path: str
    data_path: str
    model_format: str = "xgboost"
    num_examples: int | None = None
    mode: str = "verify"
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output_path: str | None = None
    output_format: str = "json"
    threads: int = 1
    num_classes: int = 2
    exact_thresholds: bool = False
    domain: tuple[float, float] = (0.0, 1.0)
    image_shape: tuple[int, int] | None = None
    pgm_prefix: str | None = None


def _pool(fn, items, threads):
    """Apply ``fn`` to every item, yielding results in completion order."""
    if threads <= 1:
        for it in items:
            yield fn(it)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, it) for it in items]
        for fut in as_completed(futures):
            yield fut.result()


def _load(cfg: RunConfig) -> tuple[Ensemble, list[tuple[int, np.ndarray]]]:
    kwargs = {}
    if cfg.model_format == "xgboost":
        kwargs = {"num_classes": cfg.num_classes, "exact_thresholds": cfg.exact_thresholds}
    ens = load_model(cfg.model_path, cfg.model_format, **kwargs)
    rows = read_libsvm(cfg.data_path, ens.dim)
    if cfg.num_examples is not None:
        rows = rows[: cfg.num_examples]
    if ens.binary:
        labels = normalize_binary_labels([y for y, _ in rows])
    else:
        labels = [y for y, _ in rows]
        bad = [y for y in labels if not 0 <= y < ens.num_classes]
        if bad:
            raise DataFormatError(f"multiclass labels must be 0..{ens.num_classes - 1}, got {bad[0]}")
    return ens, [(y, x) for y, (_, x) in zip(labels, rows)]


def _check(cfg: RunConfig, ens: Ensemble) -> None:
    if cfg.mode == "single-tree" and len(ens.trees) != 1:
        raise ConfigError(f"mode single-tree needs a 1-tree model, got {len(ens.trees)} trees")
    if cfg.mode in ("single-tree", "importance", "anchor") and not ens.binary:
        raise ConfigError(f"mode {cfg.mode} needs a binary model")
    if cfg.image_shape is not None:
        w, h = cfg.image_shape
        if w * h != ens.dim:
            raise ConfigError(f"image shape {w}x{h} does not match {ens.dim} features")
    if cfg.pgm_prefix is not None and (cfg.mode != "importance" or cfg.image_shape is None):
        raise ConfigError("--pgm needs --mode importance and --image-shape")


def _single_tree_report(ens: Ensemble, x, label, i) -> VerificationReport:
    t0 = time.perf_counter()
    pred = ens.predict(x)
    rep = VerificationReport(i, pred, label, label == pred, 0.0)
    if rep.correct:
        base = ens.base_margin
        tree = ens.trees[0].map_leaves(lambda v: v + base) if base else ens.trees[0]
        rep.radius = verify_tree_linear(tree, x, 1 if pred == 1 else -1)
    rep.wall_time = time.perf_counter() - t0
    return rep


def _example_job(cfg: RunConfig, ens: Ensemble):
    vcfg = cfg.verify
    if cfg.mode == "exact":
        vcfg = replace(vcfg, mode="exact")
    lo, hi = cfg.domain
    domain = [(lo, hi)] * ens.dim

    def job(item):
        i, (label, x) = item
        t0 = time.perf_counter()
        if cfg.mode in ("verify", "exact"):
            rep = certify(ens, x, vcfg, label, i)
            return rep.to_dict(), rep.wall_time
        if cfg.mode == "single-tree":
            rep = _single_tree_report(ens, x, label, i)
            return rep.to_dict(), rep.wall_time
        pred = ens.predict(x)
        row = {"example_id": i, "predicted": pred, "label": label, "correct": pred == label}
        y0 = 1 if pred == 1 else -1
        if row["correct"]:
            imp = feature_importance(ens, x, y0, domain, vcfg)
        else:
            imp = [0.0] * ens.dim
        row["importance"] = imp
        if cfg.mode == "anchor":
            row["anchors"] = find_anchors(ens, x, y0, domain, vcfg, imp) if row["correct"] else []
        return row, time.perf_counter() - t0

    return job


def _summary(cfg: RunConfig, rows: list[dict]) -> dict:
    n = len(rows)
    out: dict = {"examples": n, "correct": sum(bool(r["correct"]) for r in rows)}
    if cfg.mode in ("importance", "anchor"):
        if n:
            out["mean_importance"] = [float(v) for v in np.mean([r["importance"] for r in rows], axis=0)]
        if cfg.mode == "anchor":
            sizes = [len(r["anchors"]) for r in rows if r["correct"]]
            out["mean_anchor_size"] = float(np.mean(sizes)) if sizes else None
        return out
    radii = [r["radius"] for r in rows]
    good = [r["radius"] for r in rows if r["correct"]]
    out["mean_radius"] = _mean(radii)
    out["mean_radius_correct"] = _mean(good)
    grid = sorted({s["eps"] for r in rows for s in r.get("trace", ())})
    out["verified_accuracy"] = [
        {"eps": e, "accuracy": sum(r["correct"] and r["radius"] >= e for r in rows) / n} for e in grid
    ]
    return out


def _mean(vals):
    if not vals:
        return None
    return math.fsum(vals) / len(vals)


def run_batch(cfg: RunConfig) -> tuple[dict, bytes]:
    """Verify the configured examples; returns the report document and its serialized bytes."""
    t_start = time.perf_counter()
    ens, data = _load(cfg)
    _check(cfg, ens)
    job = _example_job(cfg, ens)
    ens.compiled  # build the shared tables once, before any worker starts
    results = sorted(_pool(job, list(enumerate(data)), cfg.threads), key=lambda r: r[0]["example_id"])
    rows = [r for r, _ in results]
    times = [t for _, t in results]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool": "treeverify",
        "config": {
            "mode": cfg.mode,
            "model_format": cfg.model_format,
            "num_examples": len(rows),
            "domain": list(cfg.domain),
            "verify": asdict(cfg.verify),
        },
        "model": {
            "trees": len(ens.trees),
            "dim": ens.dim,
            "num_classes": ens.num_classes,
            "base_margin": ens.base_margin,
            "convention": ens.convention,
        },
        "examples": rows,
        "summary": _summary(cfg, rows),
        "metadata": {
            "version": __version__,
            "threads": cfg.threads,
            "wall_time_total": time.perf_counter() - t_start,
            "wall_time_mean": _mean(times),
            "wall_time_per_example": times,
        },
    }
    if cfg.output_format == "json":
        payload = dump_report(doc).encode("utf-8")
    else:
        payload = _csv_payload(cfg, ens, rows).encode("utf-8")
    return doc, payload


def _csv_payload(cfg: RunConfig, ens: Ensemble, rows: list[dict]) -> str:
    head = ["example_id", "label", "predicted", "correct"]
    if cfg.mode in ("importance", "anchor"):
        feats = [f"f{j}" for j in range(ens.dim)]
        flat = []
        for r in rows:
            d = {k: r[k] for k in head}
            d.update(zip(feats, r["importance"]))
            if cfg.mode == "anchor":
                d["anchors"] = " ".join(str(a) for a in r["anchors"])
            flat.append(d)
        return report_csv(flat, head + feats + (["anchors"] if cfg.mode == "anchor" else []))
    return report_csv(rows, head + ["radius", "saturated", "target"])


def report_without_metadata(doc: dict) -> bytes:
    """Serialized report minus the timing block, for determinism checks."""
    return dump_report({k: v for k, v in doc.items() if k != "metadata"}).encode("utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treeverify", description="Certify l-inf robustness of tree ensembles.")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--format", choices=("xgboost", "native"), default="xgboost", help="model file format")
    p.add_argument("--data", required=True, help="LIBSVM data file")
    p.add_argument("--n", type=int, default=None, help="verify only the first N examples")
    p.add_argument("--mode", choices=MODES, default="verify")
    p.add_argument("--eps-max", type=float, default=1.0, help="upper end of the radius search")
    p.add_argument("--steps", type=int, default=10, help="binary-search steps after the first probe")
    p.add_argument("--T", type=int, default=2, help="parts merged per group")
    p.add_argument("--L", type=int, default=1, help="merge levels")
    p.add_argument("--method", choices=("naive", "dp"), default="naive")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="max pseudo nodes per merge; 0 = unlimited")
    p.add_argument("--witness-budget", type=int, default=VerifyConfig.witness_budget,
                   help="search nodes spent looking for a concrete flip before bounding (0 = off)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--out-format", choices=("json", "csv"), default="json")
    p.add_argument("--num-classes", type=int, default=2, help="classes in an XGBoost dump")
    p.add_argument("--exact-thresholds", action="store_true",
                   help="reproduce XGBoost's strict '<' split test exactly")
    p.add_argument("--domain", type=float, nargs=2, default=(0.0, 1.0), metavar=("LO", "HI"),
                   help="feature range used by importance and anchor modes")
    p.add_argument("--image-shape", type=int, nargs=2, default=None, metavar=("W", "H"))
    p.add_argument("--pgm", default=None, metavar="PREFIX",
                   help="write one importance map PREFIX<id>.pgm per example")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    threads = args.threads
    env = os.environ.get("TREEVERIFY_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"TREEVERIFY_THREADS must be an integer, got {env!r}") from None
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    if args.n is not None and args.n < 0:
        raise ConfigError("--n must be non-negative")
    lo, hi = args.domain
    if not lo < hi:
        raise ConfigError("--domain needs LO < HI")
    try:
        vcfg = VerifyConfig(
            T=args.T,
            L=args.L,
            method=args.method,
            search_steps=args.steps,
            eps_max=args.eps_max,
            cap=args.cap or None,
            witness_budget=args.witness_budget,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        model_path=args.model,
        data_path=args.data,
        model_format=args.format,
        num_examples=args.n,
        mode=args.mode,
        verify=vcfg,
        output_path=args.out,
        output_format=args.out_format,
        threads=threads,
        num_classes=args.num_classes,
        exact_thresholds=args.exact_thresholds,
        domain=(lo, hi),
        image_shape=tuple(args.image_shape) if args.image_shape else None,
        pgm_prefix=args.pgm,
    )


def _fail(code: int, msg: str) -> int:
    print(f"treeverify: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        doc, payload = run_batch(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except ModelFormatError as exc:
        return _fail(EXIT_MODEL, f"{args.model}: {exc}")
    except DataFormatError as exc:
        return _fail(EXIT_DATA, f"{args.data}: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        if cfg.output_path:
            with open(cfg.output_path, "wb") as fh:
                fh.write(payload)
        else:
            sys.stdout.buffer.write(payload)
            sys.stdout.flush()
        if cfg.pgm_prefix:
            w, h = cfg.image_shape
            width = cfg.domain[1] - cfg.domain[0]
            for row in doc["examples"]:
                with open(f"{cfg.pgm_prefix}{row['example_id']}.pgm", "wb") as fh:
                    fh.write(emit_importance_map(row["importance"], w, h, width))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
