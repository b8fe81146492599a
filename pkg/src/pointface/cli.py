"""Command-line pipeline: toy model -> faces -> features -> sampling -> train -> fine-tune -> embed -> evaluate.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .features import DEFAULT_K, compute_features
from .morphable import generate_dataset, make_toy_model
from .network.model import ARCHITECTURES, network_config
from .network.training import FineTuneConfig, TrainConfig, TrainingDiverged, fine_tune_triplets, train_classifier
from .recognition import PROTOCOLS, EmbeddingRecord, evaluate_embeddings
from .sampling import SamplingConfig, normalize_cloud, sample

log = logging.getLogger("pointface")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _radius(text: str):
    if text.lower() in ("none", "inf", "unbounded"):
        return None
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("radius must be positive")
    return value


def _prepare_out(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -- commands ---------------------------------------------------------------

def cmd_gen_model(args):
    model = make_toy_model(args.vertices, args.shape_dims, args.expr_dims, args.seed)
    pio.save_model(_prepare_out(args.out), model)
    print(f"vertices {model.vertex_count} shape_dims {model.n_shape} expr_dims {model.n_expr} "
          f"nose_tip {model.nose_tip_vertex}")


def cmd_gen_faces(args):
    model = pio.load_model(args.model)
    clouds = generate_dataset(model, args.ids, args.exprs, args.seed, args.noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in clouds:
        path = out / f"id{c.identity:04d}_ex{c.expression:03d}.xyz"
        if args.features:
            c = compute_features(c, args.k)
        pio.write_cloud(path, c)
        rows.append(pio.ManifestRow(path, c.identity, c.expression, args.subset))
    pio.write_manifest(out / "manifest.csv", rows)
    print(f"wrote {len(rows)} clouds to {out}")


def cmd_features(args):
    src = Path(args.inp)
    if src.suffix == ".csv":
        rows = pio.read_manifest(src)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        new_rows = []
        for r in rows:
            cloud = compute_features(pio.read_cloud(r.path), args.k)
            dest = out / r.path.name
            pio.write_cloud(dest, cloud)
            new_rows.append(pio.ManifestRow(dest, r.identity, r.expression, r.subset))
        pio.write_manifest(out / "manifest.csv", new_rows)
        print(f"computed features for {len(rows)} clouds")
    else:
        cloud = compute_features(pio.read_cloud(src), args.k)
        pio.write_cloud(_prepare_out(args.out), cloud)
        print(f"computed features for {len(cloud)} points; {int(cloud.degenerate.sum())} degenerate")


def cmd_sample(args):
    cloud = pio.read_cloud(args.inp)
    if args.sampler == "cps" and cloud.curvature is None:
        raise ValueError(f"{args.inp}: no curvature values; run the features command first")
    if not args.no_normalize:
        cloud = normalize_cloud(cloud)
    config = SamplingConfig(args.n, lam=args.lam, region_radius=args.r, aggregation=args.aggregation,
                            start_rule=args.start)
    result = sample(cloud, config, args.sampler)
    out = _prepare_out(args.out)
    pio.write_cloud(out, cloud.subset(result.selected))
    pio.write_indices_csv(out.with_name(out.stem + "_indices.csv"), result.selected)
    if args.figure:
        from .plotting import plot_sampling

        plot_sampling(cloud.positions, result.selected, _prepare_out(args.figure), result.candidate_mask,
                      cloud.curvature)
    print(f"selected {len(result.selected)} of {int(result.candidate_mask.sum())} candidates")


def _figure_path(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def cmd_train(args):
    rows, clouds = pio.load_manifest_clouds(args.manifest)
    net = network_config(args.arch, args.sampler, args.lam, args.r, num_points=args.points,
                         embedding_dim=args.embedding_dim)
    config = TrainConfig(scale=args.scale, margin=args.margin, margin_form=args.margin_form,
                         learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed)
    result = train_classifier(clouds, net, config)
    out = _prepare_out(args.out)
    pio.save_params(out, result.params)
    pio.write_loss_csv(_figure_path(out, "_loss.csv"), result.history)
    if not args.no_figures:
        from .plotting import plot_loss

        plot_loss(result.history, _figure_path(out, "_loss.png"))
    last = result.history[-1]
    print(f"trained {args.epochs} epochs: loss {last.loss:.5f} accuracy {last.accuracy:.4f}")


def cmd_finetune(args):
    params = pio.load_params(args.checkpoint)
    rows, clouds = pio.load_manifest_clouds(args.manifest)
    config = FineTuneConfig(learning_rate=args.lr, triplet_margin=args.triplet_margin, steps=args.steps,
                            triplets_per_step=args.triplets, seed=args.seed)
    result = fine_tune_triplets(params, clouds, config)
    out = _prepare_out(args.out)
    pio.save_params(out, result.params)
    lines = ["step,loss"] + [f"{i},{float(v)!r}" for i, v in enumerate(result.losses)]
    _figure_path(out, "_loss.csv").write_text("\n".join(lines) + "\n")
    print(f"fine-tuned {args.steps} steps: mean loss {np.mean(result.losses):.5f}")


def _embed_records(params, rows, clouds, batch_size):
    from .network.model import embed

    emb = embed(clouds, params, batch_size)
    return [EmbeddingRecord(r.source_id, r.identity, r.expression, emb[n], r.subset) for n, r in enumerate(rows)]


def cmd_embed(args):
    params = pio.load_params(args.checkpoint)
    rows, clouds = pio.load_manifest_clouds(args.manifest)
    records = _embed_records(params, rows, clouds, args.batch)
    pio.write_embeddings(_prepare_out(args.out), records)
    print(f"embedded {len(records)} scans")


def cmd_evaluate(args):
    if args.embeddings:
        records = pio.read_embeddings(args.embeddings)
    elif args.checkpoint and args.manifest:
        params = pio.load_params(args.checkpoint)
        rows, clouds = pio.load_manifest_clouds(args.manifest)
        records = _embed_records(params, rows, clouds, args.batch)
    else:
        raise UsageError("evaluate needs --embeddings, or --checkpoint together with --manifest")
    report = evaluate_embeddings(records, args.protocol)
    out = _prepare_out(args.out_report)
    out.write_text(report.to_text())
    _figure_path(out, "_roc.csv").write_text(report.roc_csv())
    if not args.no_figures:
        from .plotting import plot_roc

        plot_roc(report.roc, _figure_path(out, "_roc.png"))
    print(report.to_text(), end="")


def cmd_ablation(args):
    from .experiments import Setup, run_ablation

    setup = Setup(num_identities=args.ids, train_expressions=args.train_exprs, eval_expressions=args.eval_exprs,
                  num_points=args.points, epochs=args.epochs, arch=args.arch, train_seed=args.seed,
                  data_seed=args.data_seed)
    result = run_ablation(setup, args.lambdas, args.radii, args.noise)
    out = _prepare_out(args.out)
    out.write_text(result.to_csv())
    if not args.no_figures:
        from .plotting import plot_ablation

        plot_ablation(result.cells, _figure_path(out, ".png"))
    print(result.to_csv(), end="")


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pointface", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-model", help="write a toy morphable face model")
    s.add_argument("--vertices", type=int, default=1024)
    s.add_argument("--shape-dims", type=int, default=10)
    s.add_argument("--expr-dims", type=int, default=5)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("gen-faces", help="synthesise labelled face clouds and a manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--ids", type=int, required=True)
    s.add_argument("--exprs", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--subset", default="", help="subset tag written to every manifest row")
    s.add_argument("--features", action="store_true", help="also estimate normals and curvature")
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_gen_faces)

    s = sub.add_parser("features", help="estimate normals and curvature")
    s.add_argument("--in", dest="inp", required=True, help="cloud file, or manifest CSV")
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--out", required=True, help="cloud file, or directory when --in is a manifest")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("sample", help="select centroids with FPS or CPS")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--r", type=_radius, default=0.7, help="candidate radius; 'none' disables the region")
    s.add_argument("--aggregation", choices=("min_distance", "sum_distance"), default="min_distance")
    s.add_argument("--start", choices=("nose_tip", "index_zero"), default="nose_tip")
    s.add_argument("--sampler", choices=("cps", "fps"), default="cps")
    s.add_argument("--no-normalize", action="store_true", help="sample in the file's own frame")
    s.add_argument("--figure", help="optional PNG of the selection")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train the embedding network with the angular-margin loss")
    s.add_argument("--manifest", required=True)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--scale", type=float, default=30.0)
    s.add_argument("--margin", type=float, default=0.3)
    s.add_argument("--margin-form", choices=("additive", "multiplicative"), default="additive")
    s.add_argument("--points", type=int, default=4096)
    s.add_argument("--sampler", choices=("cps", "fps"), default="cps")
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--r", type=_radius, default=0.7)
    s.add_argument("--arch", choices=sorted(ARCHITECTURES), default="desk")
    s.add_argument("--embedding-dim", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="triplet fine-tuning of a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--triplet-margin", type=float, default=0.3)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--triplets", type=int, default=8, help="triplets per step")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("embed", help="write embeddings for every scan in a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("evaluate", help="rank-1 identification and ROC report")
    s.add_argument("--embeddings")
    s.add_argument("--checkpoint")
    s.add_argument("--manifest")
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--protocol", choices=PROTOCOLS, default="first_scan_gallery")
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--out-report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablation", help="rank-1 across sampling settings on noisy held-out scans")
    s.add_argument("--ids", type=int, default=20)
    s.add_argument("--train-exprs", type=int, default=10)
    s.add_argument("--eval-exprs", type=int, default=5)
    s.add_argument("--points", type=int, default=2048)
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--arch", choices=sorted(ARCHITECTURES), default="compact")
    s.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.1, 0.5])
    s.add_argument("--radii", type=_radius, nargs="+", default=[0.5, 0.7, None])
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--data-seed", type=int, default=11)
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"pointface: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"pointface: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"pointface: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
