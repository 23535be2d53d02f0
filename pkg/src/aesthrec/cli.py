"""Command-line pipelines: split, color, gram, layer-select, evaluate, tune.

Every command resolves its configuration up front, computes all outputs in
memory, and only then writes files, so a failing run leaves no partial
artifacts. Identical inputs and flags produce byte-identical outputs.
"""

import argparse
import io
import json
import logging
import sys
from pathlib import Path

from .colorfeat import SPACES, batch_extract
from .dataset import (
    InteractionMatrix,
    SplitTriple,
    load_interactions,
    load_metadata,
    metadata_to_features,
    temporal_split,
)
from .evalharness import TuneGrid, evaluate, metric_key, summarize_metric, tune
from .recommender import ItemNNRecommender, PopularityRecommender, RandomRecommender
from .simcore import KERNEL_ORDER, kernel_rank
from .stylefeat import (
    AestheticSets,
    DimensionError,
    gram,
    read_feature_maps,
    read_features,
    select_best_configuration,
    style_table,
    sweep_layers,
    write_features,
)

MODELS = ("random", "popular", "item-nn")


def _write_json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _emit(outputs):
    """Write (path, payload) pairs; directories are created as needed."""
    for path, payload in outputs:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(payload, bytes):
            path.write_bytes(payload)
        else:
            path.write_text(payload, encoding="utf-8")


def _interactions_text(matrix):
    lines = []
    for r in matrix.to_interactions():
        lines.append(f"{r.user_id}\t{r.photo_id}\t{r.timestamp}\n")
    return "".join(lines)


def _parse_list(text, convert):
    values = [convert(part) for part in str(text).split(",") if part != ""]
    if not values:
        raise ValueError(f"empty list value {text!r}")
    return values


def _parse_kernels(text):
    kernels = _parse_list(text, str)
    for kern in kernels:
        kernel_rank(kern)
    return kernels


# -- split --------------------------------------------------------------------


def cmd_split(args):
    interactions = load_interactions(args.interactions)
    triples = temporal_split(interactions, args.num_splits, args.train_frac, args.valid_frac)
    out = Path(args.out)
    config = {
        "command": "split",
        "interactions": str(args.interactions),
        "num_splits": args.num_splits,
        "train_frac": args.train_frac,
        "valid_frac": args.valid_frac,
        "out": str(out),
    }
    users = triples[0].train.users
    items = triples[0].train.items
    manifest_lines = []
    outputs = []
    for index, triple in enumerate(triples):
        base = out / f"split_{index:02d}"
        outputs.append((base / "train.tsv", _interactions_text(triple.train)))
        outputs.append((base / "validation.tsv", _interactions_text(triple.validation)))
        outputs.append((base / "test.tsv", _interactions_text(triple.test)))
        t1, t2 = triple.boundaries
        manifest_lines.append(
            f"{index}\t{t1}\t{t2}\t{triple.train.nnz}\t{triple.validation.nnz}\t{triple.test.nnz}\n"
        )
    outputs.append((out / "users.tsv", "".join(u + "\n" for u in users)))
    outputs.append((out / "items.tsv", "".join(p + "\n" for p in items)))
    outputs.append((out / "splits.tsv", "".join(manifest_lines)))
    outputs.append((out / "run.json", _write_json_text({"config": config})))
    _emit(outputs)
    print(f"wrote {len(triples)} splits to {out}")
    return 0


def _read_tokens(path):
    return [line.rstrip("\n") for line in Path(path).read_text(encoding="utf-8").splitlines()]


def _triple_from_parts(train, valid, test, user_index=None, item_index=None):
    if user_index is None or item_index is None:
        combined = sorted(
            train + valid + test, key=lambda r: (r.timestamp, r.user_id, r.photo_id)
        )
        user_index = {}
        item_index = {}
        for r in combined:
            user_index.setdefault(r.user_id, len(user_index))
            item_index.setdefault(r.photo_id, len(item_index))
    t1 = min((r.timestamp for r in valid), default=0)
    t2 = min((r.timestamp for r in test), default=t1)
    return SplitTriple(
        train=InteractionMatrix.from_interactions(train, user_index, item_index),
        validation=InteractionMatrix.from_interactions(valid, user_index, item_index),
        test=InteractionMatrix.from_interactions(test, user_index, item_index),
        boundaries=(t1, t2),
    )


def _load_splits(args):
    if getattr(args, "splits_dir", None):
        root = Path(args.splits_dir)
        split_dirs = sorted(p for p in root.glob("split_*") if p.is_dir())
        if not split_dirs:
            raise ValueError(f"no split_* directories under {root}")
        user_index = item_index = None
        if (root / "users.tsv").exists() and (root / "items.tsv").exists():
            user_index = {u: i for i, u in enumerate(_read_tokens(root / "users.tsv"))}
            item_index = {p: j for j, p in enumerate(_read_tokens(root / "items.tsv"))}
        triples = []
        for d in split_dirs:
            triples.append(
                _triple_from_parts(
                    load_interactions(d / "train.tsv"),
                    load_interactions(d / "validation.tsv"),
                    load_interactions(d / "test.tsv"),
                    user_index,
                    item_index,
                )
            )
        return triples
    if args.train and args.valid and args.test:
        return [
            _triple_from_parts(
                load_interactions(args.train),
                load_interactions(args.valid),
                load_interactions(args.test),
            )
        ]
    raise ValueError("provide --splits-dir or all of --train/--valid/--test")


# -- feature extraction ---------------------------------------------------------


def cmd_color(args):
    if args.space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {args.space!r}")
    table = batch_extract(args.images, args.space, args.bins)
    config = {
        "command": "color",
        "images": str(args.images),
        "space": args.space,
        "bins": args.bins,
        "out": str(args.out),
    }
    buffer = io.BytesIO()
    write_features(table, buffer)
    _emit(
        [
            (args.out, buffer.getvalue()),
            (
                str(args.out) + ".manifest.json",
                _write_json_text({"config": config, "records": len(table), "dim": table.dim}),
            ),
        ]
    )
    print(f"wrote {len(table)} vectors (dim {table.dim}) to {args.out}")
    return 0


def cmd_meta(args):
    records = load_metadata(args.metadata)
    vocabulary = None
    if args.vocabulary:
        vocabulary = [
            line
            for line in Path(args.vocabulary).read_text(encoding="utf-8").splitlines()
            if line
        ]
    table = metadata_to_features(records, vocabulary)
    config = {
        "command": "meta",
        "metadata": str(args.metadata),
        "vocabulary": str(args.vocabulary) if args.vocabulary else None,
        "out": str(args.out),
    }
    buffer = io.BytesIO()
    write_features(table, buffer)
    _emit(
        [
            (args.out, buffer.getvalue()),
            (
                str(args.out) + ".manifest.json",
                _write_json_text({"config": config, "records": len(table), "dim": table.dim}),
            ),
        ]
    )
    print(f"wrote {len(table)} vectors (dim {table.dim}) to {args.out}")
    return 0


def cmd_gram(args):
    maps = []
    for path in args.maps:
        maps.extend(read_feature_maps(path))
    if not maps:
        raise ValueError("no feature maps in the given files")
    layers = {m.layer_index for m in maps}
    channels = {m.channels for m in maps}
    if len(layers) > 1 or len(channels) > 1:
        raise DimensionError(
            f"feature maps mix layers {sorted(layers)} / channel counts {sorted(channels)}; "
            "run one layer at a time"
        )
    table = style_table(gram(m) for m in maps)
    config = {
        "command": "gram",
        "maps": [str(p) for p in args.maps],
        "out": str(args.out),
        "layer": sorted(layers)[0],
    }
    buffer = io.BytesIO()
    write_features(table, buffer)
    _emit(
        [
            (args.out, buffer.getvalue()),
            (
                str(args.out) + ".manifest.json",
                _write_json_text({"config": config, "records": len(table), "dim": table.dim}),
            ),
        ]
    )
    print(f"wrote {len(table)} style vectors (dim {table.dim}) to {args.out}")
    return 0


# -- layer selection ------------------------------------------------------------


def _parse_layer_features(entries):
    tables = {}
    for entry in entries:
        layer_text, _, path = entry.partition("=")
        if not path:
            raise ValueError(f"--features expects LAYER=PATH, got {entry!r}")
        layer = int(layer_text)
        if layer in tables:
            raise ValueError(f"layer {layer} given twice")
        tables[layer] = read_features(path)
    return tables


def cmd_layer_select(args):
    tables = _parse_layer_features(args.features)
    sets = AestheticSets.from_json(args.sets)
    ks = _parse_list(args.k, int)
    kernels = _parse_kernels(args.kernels)
    results = sweep_layers(tables, sets, kernels, ks)
    best_layer, best_kernel = select_best_configuration(results)
    rows = ["layer,kernel,k,precision\n"]
    for (layer, kernel) in sorted(results, key=lambda lk: (lk[0], kernel_rank(lk[1]))):
        for k, precision in zip(ks, results[(layer, kernel)]):
            rows.append(f"{layer},{kernel},{k},{precision!r}\n")
    config = {
        "command": "layer-select",
        "features": list(args.features),
        "sets": str(args.sets),
        "k": ks,
        "kernels": kernels,
        "out": str(args.out),
    }
    _emit(
        [
            (args.out, "".join(rows)),
            (
                str(args.out) + ".manifest.json",
                _write_json_text(
                    {"config": config, "best": {"layer": best_layer, "kernel": best_kernel}}
                ),
            ),
        ]
    )
    print(f"best layer={best_layer} kernel={best_kernel}")
    return 0


# -- evaluation and tuning --------------------------------------------------------


def _model_factory(args, features):
    if args.model == "random":
        return lambda split: RandomRecommender(seed=args.seed).fit(split.train)
    if args.model == "popular":
        return lambda split: PopularityRecommender().fit(split.train)
    if args.model == "item-nn":
        def fit(split):
            est = ItemNNRecommender(
                theta=args.theta,
                side_kernel=args.side_kernel,
                interaction_kernel=args.interaction_kernel,
                normalize=args.normalize,
                neighbor_limit=args.neighbor_limit,
            )
            return est.fit(split.train, item_features=features)
        return fit
    raise ValueError(f"model must be one of {MODELS}, got {args.model!r}")


def cmd_evaluate(args):
    splits = _load_splits(args)
    features = read_features(args.features) if args.features else None
    if args.model == "item-nn" and args.theta > 0.0 and features is None:
        raise ValueError("item-nn with theta > 0 needs --features")
    factory = _model_factory(args, features)
    names = [metric_key("precision", args.k), "r_precision", "average_precision"]
    per_split = {name: [] for name in names}
    for split in splits:
        model = factory(split)
        scores = evaluate(model, split, phase=args.phase, k=args.k)
        for name in names:
            per_split[name].append(scores[name])
    config = {
        "command": "evaluate",
        "model": args.model,
        "phase": args.phase,
        "k": args.k,
        "seed": args.seed,
        "theta": args.theta,
        "side_kernel": args.side_kernel,
        "interaction_kernel": args.interaction_kernel,
        "normalize": args.normalize,
        "neighbor_limit": args.neighbor_limit,
        "features": str(args.features) if args.features else None,
        "splits_dir": str(args.splits_dir) if args.splits_dir else None,
        "rank_length": f"max(100, 10*|relevant|, {args.k})",
        "out": str(args.out),
    }
    metrics = {}
    for name in names:
        result = summarize_metric(name, per_split[name])
        metrics[name] = {
            "splits": list(result.per_split),
            "mean": result.mean,
            "ci95": result.ci_halfwidth if len(result.per_split) > 1 else None,
        }
    report = {"model": args.model, "config": config, "metrics": metrics}
    _emit([(args.out, _write_json_text(report))])
    for name in names:
        ci = metrics[name]["ci95"]
        ci_text = f" +/- {ci:.6f}" if ci is not None else ""
        print(f"{name}: {metrics[name]['mean']:.6f}{ci_text}")
    return 0


def cmd_tune(args):
    splits = _load_splits(args)
    features = read_features(args.features) if args.features else None
    grid = TuneGrid(
        thetas=tuple(_parse_list(args.thetas, float)),
        side_kernels=tuple(_parse_kernels(args.side_kernels)),
        interaction_kernels=tuple(_parse_kernels(args.interaction_kernels)),
    )
    objective = args.objective.replace("-", "_")
    result = tune(
        grid, splits, features=features, objective=objective, k=args.k, normalize=args.normalize
    )
    config = {
        "command": "tune",
        "thetas": list(grid.thetas),
        "side_kernels": list(grid.side_kernels),
        "interaction_kernels": list(grid.interaction_kernels),
        "objective": objective,
        "k": args.k,
        "normalize": args.normalize,
        "features": str(args.features) if args.features else None,
        "splits_dir": str(args.splits_dir) if args.splits_dir else None,
        "out": str(args.out),
    }
    payload = {
        "config": config,
        "objective": result.objective,
        "k": result.k,
        "best": {
            "theta": result.best.theta,
            "side_kernel": result.best.side_kernel,
            "interaction_kernel": result.best.interaction_kernel,
        },
        "grid": [
            {
                "theta": cell.config.theta,
                "side_kernel": cell.config.side_kernel,
                "interaction_kernel": cell.config.interaction_kernel,
                "splits": list(cell.per_split),
                "mean": cell.mean,
            }
            for cell in result.cells
        ],
    }
    _emit([(args.out, _write_json_text(payload))])
    print(
        f"best theta={result.best.theta} side={result.best.side_kernel} "
        f"interaction={result.best.interaction_kernel}"
    )
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aesthrec",
        description="Hybrid photo recommendation pipelines with aesthetic side information.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="build temporally ordered train/validation/test splits")
    p.add_argument("--interactions", required=True, help="interaction TSV (user, photo, timestamp)")
    p.add_argument("--num-splits", type=int, default=5)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--valid-frac", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("color", help="extract color-histogram features from an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--space", choices=SPACES, default="hsv")
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=cmd_color)

    p = sub.add_parser("meta", help="turn photo metadata into multi-hot feature vectors")
    p.add_argument("--metadata", required=True, help="metadata TSV (photo, categories, keywords, editors_choice)")
    p.add_argument("--vocabulary", default=None, help="optional fixed token list, one per line")
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=cmd_meta)

    p = sub.add_parser("gram", help="turn raw feature maps into style-vector features")
    p.add_argument("--maps", action="append", required=True, help="feature-map file (repeatable)")
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("layer-select", help="score layers and kernels on annotated aesthetic sets")
    p.add_argument(
        "--features", action="append", required=True, help="LAYER=PATH feature file (repeatable)"
    )
    p.add_argument("--sets", required=True, help="aesthetic sets JSON")
    p.add_argument("--k", default="10,15", help="comma-separated k values")
    p.add_argument("--kernels", default=",".join(KERNEL_ORDER))
    p.add_argument("--out", required=True, help="output CSV table")
    p.set_defaults(func=cmd_layer_select)

    p = sub.add_parser("evaluate", help="evaluate a recommender over splits")
    p.add_argument("--splits-dir", default=None)
    p.add_argument("--train", default=None)
    p.add_argument("--valid", default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--phase", choices=("validation", "test"), default="test")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--side-kernel", choices=KERNEL_ORDER, default="cosine")
    p.add_argument("--interaction-kernel", choices=KERNEL_ORDER, default="cosine")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--neighbor-limit", type=int, default=None)
    p.add_argument("--features", default=None, help="feature file for theta > 0")
    p.add_argument("--out", required=True, help="output JSON report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="grid-search theta and kernels on validation data")
    p.add_argument("--splits-dir", default=None)
    p.add_argument("--train", default=None)
    p.add_argument("--valid", default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--thetas", default="0,0.01,0.02,0.04,0.08,0.1,0.2,0.4,0.8,1.0")
    p.add_argument("--side-kernels", default=",".join(KERNEL_ORDER))
    p.add_argument("--interaction-kernels", default=",".join(KERNEL_ORDER))
    p.add_argument(
        "--objective",
        choices=("precision", "r-precision", "average-precision"),
        default="precision",
    )
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--features", default=None)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=cmd_tune)

    return parser


def main(argv=None):
    logging.basicConfig(format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # data and I/O errors become a one-line message
        message = " ".join(str(exc).splitlines()) or type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
