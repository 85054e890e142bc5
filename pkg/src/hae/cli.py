"""``hae`` command line: gen-data, train, embed, edit, eval, plot, check."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from hae import checks
from hae.data import DatasetFormatError, HierSpec, gen_hierarchy, read_dataset, write_dataset
from hae.edit import (
    PerturbSpec,
    interpolate,
    perturb,
    random_direction,
    transfer_edit,
    write_codes_csv,
)
from hae.evaluation import SweepConfig, config_hash, radius_structure, sweep, train_oracle
from hae.geometry import DEFAULT_EPS, PoincareBall
from hae.grad import NonFiniteError
from hae.train import (
    CheckpointError,
    TrainConfig,
    default_model_config,
    fit,
    load_checkpoint,
    save_checkpoint,
)
from hae.model import HaeModel

DEFAULT_RADIUS_FRACTIONS = (1.0, 0.85, 0.7, 0.55)
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class CliError(Exception):
    """Validation failure reported with exit code 1."""


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def echo_config(args) -> str:
    """Print the resolved configuration and its hash; returns the hash."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "quiet", "out")}
    digest = config_hash(cfg)
    print(json.dumps({"config": cfg, "config_hash": digest}, sort_keys=True))
    return digest


def _load(args):
    ckpt = load_checkpoint(args.ckpt)
    return ckpt, ckpt.model()


def _dataset(path):
    return read_dataset(path)


def _lookup_rows(ds, ids) -> list[int]:
    rows = []
    for i in ids:
        try:
            rows.append(ds.row(int(i)))
        except KeyError:
            raise CliError(f"unknown sample id {i}") from None
    return rows


def _check_radius(ball: PoincareBall, r: float) -> None:
    if not 0 <= r <= ball.max_radius:
        raise CliError(f"radius {r} outside [0, {ball.max_radius:.6g}]")


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = HierSpec(n_super=args.n_super, classes_per_super=args.classes_per_super,
                    per_class=args.per_class, dim=args.dim, noise=args.noise,
                    n_unseen_classes=args.n_unseen, seed=args.seed)
    ds = gen_hierarchy(spec)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = _dataset(args.data)
    model_cfg = default_model_config(ds, ball_dim=args.ball_dim, hidden=args.hidden, init_seed=args.seed)
    train_cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr,
                            dynamic_latent=args.dynamic_latent, seed=args.seed)
    model = HaeModel(model_cfg)
    every = max(1, args.steps // 10)

    def progress(step, parts):
        if step % every == 0 or step == args.steps:
            _log(args, f"step {step}/{args.steps} total={parts['total']:.5f} l2={parts['l2']:.5f} "
                       f"hyper={parts['hyper']:.5f}")

    start = time.perf_counter()
    try:
        _, ckpt, history = fit(model, ds, train_cfg, progress)
    except NonFiniteError as exc:
        rescue = Path(args.out).with_suffix(".lastgood.json")
        save_checkpoint(exc.checkpoint, rescue)
        raise CliError(f"training diverged: {exc}; last good checkpoint written to {rescue}") from None
    save_checkpoint(ckpt, args.out)
    hist_path = history_path(args.out)
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        fields = list(history[0]) if history else ["step"]
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (v if k == "step" else format(v, ".17g")) for k, v in row.items()})
    _log(args, f"trained {args.steps} steps in {time.perf_counter() - start:.1f}s")
    print(json.dumps({"checkpoint": str(args.out), "history": str(hist_path), "metrics": ckpt.metrics},
                     sort_keys=True))
    return 0


def history_path(ckpt_path) -> Path:
    p = Path(ckpt_path)
    return p.with_name(p.stem + ".history.csv")


def cmd_embed(args) -> int:
    _, model = _load(args)
    ds = _dataset(args.data)
    with torch.no_grad():
        z = model.encode(ds.features)[1]
    n = z.shape[-1]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "class", "split"] + [f"z{i}" for i in range(n)])
        for i in range(len(ds)):
            writer.writerow([int(ds.ids[i]), int(ds.classes[i]), ds.splits[i]]
                            + [format(float(v), ".17g") for v in z[i]])
    print(f"wrote {len(ds)} embeddings (n = {n}) to {args.out}")
    return 0


def cmd_edit(args) -> int:
    _, model = _load(args)
    ds = _dataset(args.data)
    ball = model.ball
    rows_out, codes = [], []
    with torch.no_grad():
        if args.mode == "interpolate":
            src, dst = _lookup_rows(ds, [args.src, args.dst])
            z = model.encode(ds.features[[src, dst]])[1]
            points = interpolate(ball, z[0], z[1], args.steps)
            rows_out = [(f"{args.src}->{args.dst}", k, p) for k, p in enumerate(points)]
        elif args.mode == "perturb":
            _check_radius(ball, args.radius)
            src, = _lookup_rows(ds, [args.src])
            z = model.encode(ds.features[src])[1]
            pool = model.encode(ds.seen().features)[1]
            base = PerturbSpec(args.radius, t=0.0, seed=args.seed)
            rows_out = [(args.src, 0.0, perturb(ball, z, pool, base))]
            step = args.t if args.s is None else args.s
            if step != 0:
                for k in range(args.count):
                    spec = (PerturbSpec(args.radius, t=args.t, seed=args.seed + k) if args.s is None
                            else PerturbSpec(args.radius, t=None, s=args.s, seed=args.seed + k))
                    rows_out.append((args.src, step, perturb(ball, z, pool, spec)))
        else:
            _check_radius(ball, args.radius)
            ids = [int(i) for i in args.ids.split(",") if i.strip()]
            rows = _lookup_rows(ds, ids)
            z = model.encode(ds.features[rows])[1]
            u = random_direction(z.shape[-1], args.direction_seed)
            edited = transfer_edit(ball, u, args.s, args.radius, list(z))
            rows_out = [(i, args.s, e) for i, e in zip(ids, edited)]
        codes = torch.stack([r[2] for r in rows_out])
        decoded = model.decode(codes)[1]
    write_codes_csv(args.out, [(i, t, c.tolist()) for i, t, c in rows_out], decoded.tolist())
    print(f"wrote {len(rows_out)} codes to {args.out}")
    return 0


def cmd_eval(args) -> int:
    _, model = _load(args)
    ds = _dataset(args.data)
    r_max = model.ball.max_radius
    radii = args.radii if args.radii else [f * r_max for f in DEFAULT_RADIUS_FRACTIONS]
    for r in radii:
        _check_radius(model.ball, r)
    oracle = train_oracle(ds, seed=args.seed)
    _log(args, f"oracle held-out accuracy {oracle.heldout_accuracy:.4f}")
    cfg = SweepConfig(n_sources=args.n_sources, per_source=args.per_source, t=args.t,
                      seed=args.seed, source_split=args.source_split)
    try:
        report = sweep(model, oracle, ds, sorted(radii, reverse=True), cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report.radius_structure = radius_structure(model, ds, seed=args.seed)
    out = Path(args.out)
    report.write(out, out.with_suffix(".csv"))
    for row in zip(report.radii, report.preservation, report.diversity):
        print("radius={:.4f} preservation={:.4f} diversity={:.4f}".format(*row))
    return 0


def _read_embeddings(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], [], np.zeros((0, 2))
    header, body = rows[0], rows[1:]
    zcols = [i for i, h in enumerate(header) if h.startswith("z") and h[1:].isdigit()]
    if len(zcols) != 2:
        raise CliError(f"plot needs 2-D embeddings but {path} has n = {len(zcols)}; "
                       "train a model with --ball-dim 2 and re-run embed")
    cls_col = header.index("class") if "class" in header else None
    ids = [r[0] for r in body]
    classes = [r[cls_col] if cls_col is not None else "" for r in body]
    pts = np.array([[float(r[i]) for i in zcols] for r in body], dtype=float).reshape(-1, 2)
    return ids, classes, pts


def render_svg(points, classes, geodesics=(), c: float = 1.0, size: int = 400, margin: int = 10) -> str:
    """Disk boundary, class-coloured markers and geodesic polylines as SVG 1.1."""
    half = size / 2
    scale = (half - margin) * np.sqrt(c)

    def xy(p):
        return half + scale * float(p[0]), half - scale * float(p[1])

    colours = {k: PALETTE[i % len(PALETTE)] for i, k in enumerate(sorted(set(classes), key=str))}
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<circle class="boundary" cx="{half:g}" cy="{half:g}" r="{half - margin:g}" '
        'fill="none" stroke="black" stroke-width="1"/>',
    ]
    for line in geodesics:
        coords = " ".join("{:.6f},{:.6f}".format(*xy(p)) for p in line)
        parts.append(f'<polyline class="geodesic" points="{coords}" fill="none" stroke="#444" stroke-width="1"/>')
    for p, k in zip(points, classes):
        x, y = xy(p)
        parts.append(f'<circle class="point" cx="{x:.6f}" cy="{y:.6f}" r="2" fill="{colours[k]}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    ids, classes, pts = _read_embeddings(args.emb)
    ball = PoincareBall(args.c, DEFAULT_EPS)
    lines = []
    for a, b in args.geodesic or []:
        try:
            i, j = ids.index(a), ids.index(b)
        except ValueError:
            raise CliError(f"geodesic endpoints {a}, {b} not found in {args.emb}") from None
        ts = torch.linspace(0, 1, 64, dtype=torch.float64)
        x, y = torch.as_tensor(pts[i]), torch.as_tensor(pts[j])
        line = [ball.geodesic(x, y, float(t)) for t in ts[1:-1]]
        lines.append([pts[i]] + [p.numpy() for p in line] + [pts[j]])
    Path(args.out).write_text(render_svg(pts, classes, lines, args.c), encoding="utf-8")
    print(f"wrote {len(pts)} points and {len(lines)} geodesics to {args.out}")
    return 0


def cmd_check(args) -> int:
    if args.suite == "identities":
        results = checks.identity_suite(n_pairs=args.n, seed=args.seed)
    else:
        results = checks.grad_suite(n_configs=args.n, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.worst / max(r.tol, 1e-300))
        print(f"worst offender: {worst.name} ({worst.worst:.3e} > {worst.tol:.0e})")
        return 1
    return 0


# -- parser -------------------------------------------------------------------

def _radii(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="hae", description="Hyperbolic attribute editing on the Poincare ball")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic hierarchy CSV")
    p.add_argument("--out", required=True)
    d = HierSpec()
    p.add_argument("--n-super", type=int, default=d.n_super)
    p.add_argument("--classes-per-super", type=int, default=d.classes_per_super)
    p.add_argument("--per-class", type=int, default=d.per_class)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--n-unseen", type=int, default=d.n_unseen_classes)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model on the seen classes")
    t = TrainConfig()
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.add_argument("--steps", type=int, default=t.steps)
    p.add_argument("--lr", type=float, default=t.learning_rate)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--ball-dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dynamic-latent", action="store_true", help="adaptive latent-loss weight")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=[common], help="export ball codes of every sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("edit", parents=[common], help="interpolate, perturb or transfer edits")
    modes = p.add_subparsers(dest="mode", required=True)
    for name in ("interpolate", "perturb", "transfer"):
        m = modes.add_parser(name, parents=[common])
        m.add_argument("--ckpt", required=True)
        m.add_argument("--data", required=True)
        m.add_argument("--out", required=True)
        m.set_defaults(func=cmd_edit)
        if name == "interpolate":
            m.add_argument("--src", type=int, required=True)
            m.add_argument("--dst", type=int, required=True)
            m.add_argument("--steps", type=int, default=8)
        elif name == "perturb":
            m.add_argument("--src", type=int, required=True)
            m.add_argument("--radius", type=float, required=True)
            step = m.add_mutually_exclusive_group()
            step.add_argument("--t", type=float, default=0.2, help="geodesic fraction towards a seen code")
            step.add_argument("--s", type=float, default=None, help="tangent step along a random direction")
            m.add_argument("--count", type=int, default=1)
        else:
            m.add_argument("--ids", required=True, help="comma-separated sample ids")
            m.add_argument("--direction-seed", type=int, required=True)
            m.add_argument("--s", type=float, default=1.0)
            m.add_argument("--radius", type=float, required=True)

    p = sub.add_parser("eval", parents=[common], help="radius sweep of preservation and diversity")
    s = SweepConfig()
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path; a CSV mirror is written beside it")
    p.add_argument("--radii", type=_radii, default=None, help="default: [1.0, 0.85, 0.7, 0.55] x r_max")
    p.add_argument("--n-sources", type=int, default=s.n_sources)
    p.add_argument("--per-source", type=int, default=s.per_source)
    p.add_argument("--t", type=float, default=s.t)
    p.add_argument("--source-split", choices=("heldout", "seen", "unseen"), default=s.source_split)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="SVG of 2-D ball embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--geodesic", nargs=2, action="append", metavar=("ID_A", "ID_B"))
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("check", parents=[common], help="numerical self-checks")
    p.add_argument("--suite", choices=("identities", "grads"), required=True)
    p.add_argument("--n", type=int, default=None, help="pairs (identities) or configurations (grads)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    if getattr(args, "suite", None) is not None and args.n is None:
        args.n = 10_000 if args.suite == "identities" else 100
    echo_config(args)
    try:
        return args.func(args)
    except (CliError, DatasetFormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
