"""Command-line entry point: ``meshmae <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import augment
from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, RunConfig, load_config
from .data import (FACE_ORDERS, MANIFEST, face_order_permutation, load_samples,
                   reorder_faces)
from .downstream import (Classifier, FinetuneConfig, Segmenter, accuracy, finetune,
                         init_from_pretrained, linear_probe, transfer_labels)
from .mesh import MeshError, read_mesh
from .pretrain import (NonFiniteLossError, PretrainConfig, dump_diagnostics,
                       export_reconstruction, pretrain)
from .remesh import remesh_pipeline, write_tmesh
from .synth import CLASS_FAMILIES, SEG_FAMILIES, SyntheticSpec, write_dataset
from .transformer import MeshMAE, POS_STRATEGIES

log = logging.getLogger("meshmae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MESH_SUFFIXES = (".obj", ".off")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ shared helpers

def _run_config(args) -> RunConfig:
    preset = getattr(args, "preset", "desk")
    cfg = load_config(getattr(args, "config", None), preset)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _record(out: Path, args, cfg: RunConfig, **extra) -> None:
    """Write ``<out>.run.json`` (or ``out/run.json``) with config hash and seed."""
    info = {"command": args.command, "seed": cfg.seed, "config_hash": cfg.digest(),
            "config": cfg.to_dict(), **extra}
    target = out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")
    target.write_text(json.dumps(info, indent=2, sort_keys=True, default=str))
    log.info("%s: config %s seed %d -> %s", args.command, cfg.digest(), cfg.seed, out)


def _require_out(args) -> Path:
    if getattr(args, "out", None) is None:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _load(data: str, split: str | None, classes=None):
    root = Path(data)
    if not (root / MANIFEST).exists():
        raise DataError(f"{root}: no {MANIFEST}; run `meshmae preprocess` first")
    samples, classes = load_samples(root, split, classes)
    if not samples:
        raise DataError(f"{root}: no meshes in split {split!r}")
    return samples, classes


def _split_or_all(data: str, split: str):
    root = Path(data)
    meta = json.loads((root / MANIFEST).read_text()) if (root / MANIFEST).exists() else {}
    splits = {e["split"] for e in meta.get("meshes", [])}
    return _load(data, split if split in splits else None)


def _pretrain_config(cfg: RunConfig, args=None) -> PretrainConfig:
    p = cfg.pretrain
    over = {}
    if args is not None:
        for key, attr in (("mask_ratio", "mask_ratio"), ("lam", "lam"), ("epochs", "epochs"),
                          ("lr", "lr"), ("batch_size", "batch_size"), ("max_steps", "steps")):
            v = getattr(args, attr, None)
            if v is not None:
                over[key] = v
    return PretrainConfig(mask_ratio=over.get("mask_ratio", p.mask_ratio),
                          lam=over.get("lam", p.lam), lr=over.get("lr", p.lr),
                          weight_decay=p.weight_decay,
                          batch_size=over.get("batch_size", p.batch_size),
                          epochs=over.get("epochs", p.epochs),
                          max_steps=over.get("max_steps", p.max_steps), seed=cfg.seed)


def _finetune_config(cfg: RunConfig, args=None) -> FinetuneConfig:
    f = cfg.finetune
    epochs = getattr(args, "epochs", None) or f.epochs
    lr = getattr(args, "lr", None)
    return FinetuneConfig(epochs=epochs, lr=f.lr if lr is None else lr,
                          weight_decay=f.weight_decay, batch_size=f.batch_size, seed=cfg.seed)


def _with_order(samples, order: str, seed: int):
    if order == "original":
        return list(samples)
    perm = face_order_permutation(order, seed=seed)
    return [reorder_faces(s, perm) for s in samples]


def _pretrained_state(init: str) -> dict | None:
    if init in ("scratch", "random"):
        return None
    model, meta = load_model(init)
    if meta.get("kind", "mae") not in ("mae", "cls", "seg"):
        raise CheckpointError(f"{init}: unexpected checkpoint kind")
    return model.state_dict()


# ------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    families = tuple(args.families.split(","))
    spec = SyntheticSpec(families, args.per_class, args.noise, cfg.seed,
                         {"train": 1 - args.test_fraction, "test": args.test_fraction},
                         rotate=args.rotate)
    manifest = write_dataset(spec, out)
    _record(out, args, cfg, meshes=len(manifest["meshes"]))
    print(f"wrote {len(manifest['meshes'])} meshes to {out}")
    return EXIT_OK


# ------------------------------------------------------------ preprocess

def _classify_path(rel: Path) -> tuple[str, str]:
    parts = rel.parts
    if len(parts) >= 3:
        return parts[0], parts[1]
    if len(parts) == 2:
        return "train", parts[0]
    return "train", "unlabeled"


def _preprocess_one(job: tuple) -> dict:
    """Remesh one raw file into ``variants`` t-meshes; never raises on mesh errors."""
    src, rel, out, index, cfg = job
    split, cls = _classify_path(rel)
    result = {"source": str(rel), "outputs": [], "errors": []}
    try:
        raw = read_mesh(src)
    except (MeshError, OSError, ValueError) as e:
        result["errors"].append(f"{type(e).__name__}: {e}")
        return result
    labels_path = src.with_suffix(".labels")
    raw_labels = np.loadtxt(labels_path, dtype=np.int64).reshape(-1) if labels_path.exists() else None
    for v in range(cfg.remesh.variants):
        seq = np.random.SeedSequence([cfg.seed, index, v])
        remesh_seed, aug_seed = (int(x) for x in seq.generate_state(2))
        mesh = augment(raw, np.random.default_rng(aug_seed), cfg.aug) if cfg.aug.enable else raw
        try:
            tm = remesh_pipeline(mesh, cfg.remesh_config(remesh_seed)).check()
        except MeshError as e:
            result["errors"].append(f"variant {v}: {type(e).__name__}: {e}")
            continue
        name = f"{rel.stem}_v{v:02d}.obj"
        dest = out / split / cls / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_tmesh(tm, dest)
        if raw_labels is not None:
            face_labels = transfer_labels(mesh, raw_labels, tm)
            np.savetxt(dest.with_suffix(".labels"), face_labels, fmt="%d")
        result["outputs"].append({"path": str(dest.relative_to(out)), "split": split, "class": cls,
                                  "source": str(rel), "variant": v, "seed": remesh_seed,
                                  "patches": tm.n_patches})
    return result


def cmd_preprocess(args) -> int:
    cfg = _run_config(args)
    if args.variants is not None:
        cfg = replace(cfg, remesh=replace(cfg.remesh, variants=args.variants))
    if args.workers is not None:
        cfg = replace(cfg, remesh=replace(cfg.remesh, workers=args.workers))
    src = Path(args.input)
    if not src.is_dir():
        raise DataError(f"{src}: not a readable directory")
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in src.rglob("*") if p.suffix.lower() in MESH_SUFFIXES)
    if not files:
        raise DataError(f"{src}: no .obj/.off files found")
    jobs = [(f, f.relative_to(src), out, i, cfg) for i, f in enumerate(files)]
    if cfg.remesh.workers > 1:
        with ProcessPoolExecutor(cfg.remesh.workers) as pool:
            results = list(pool.map(_preprocess_one, jobs))
    else:
        results = [_preprocess_one(j) for j in jobs]
    meshes = [o for r in results for o in r["outputs"]]
    failed = [{"source": r["source"], "errors": r["errors"]} for r in results if r["errors"]]
    manifest = {"config_hash": cfg.digest(), "seed": cfg.seed, "variants": cfg.remesh.variants,
                "meshes": meshes, "failed": failed}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    _record(out, args, cfg, inputs=len(files), outputs=len(meshes), failed=len(failed))
    print(f"{len(meshes)} t-meshes from {len(files)} inputs, {len(failed)} with failures")
    return EXIT_OK if meshes else EXIT_DATA


# ------------------------------------------------------------ pretrain

def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    if args.pos_strategy:
        cfg = replace(cfg, model=replace(cfg.model, pos_strategy=args.pos_strategy))
    out = _require_out(args)
    samples, _ = _split_or_all(args.data, "train")
    samples = _with_order(samples, args.face_order, cfg.seed)
    pcfg = _pretrain_config(cfg, args)
    model = MeshMAE(cfg.model, seed=cfg.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    try:
        result = pretrain(model, samples, pcfg, log_path)
    except NonFiniteLossError as e:
        dump = dump_diagnostics(e, out.with_suffix(".diagnostics.json"))
        log.error("%s (diagnostics in %s)", e, dump)
        return EXIT_NUMERIC
    save_model(out, model, {"seed": cfg.seed, "config_hash": cfg.digest(),
                            "face_order": args.face_order})
    _record(out, args, cfg, steps=len(result.trace), final_loss=result.losses[-1])
    print(f"pretrained {len(result.trace)} steps, loss {result.losses[0]:.4f} -> "
          f"{result.losses[-1]:.4f}; saved {out}")
    return EXIT_OK


# ------------------------------------------------------------ finetune / probe / eval

def _write_metrics(out: Path, rows: list[dict], summary: dict) -> None:
    csv_path = out.with_suffix(".metrics.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    lines = [f"{k}: {v}" for k, v in summary.items()]
    out.with_suffix(".summary.txt").write_text("\n".join(lines) + "\n")


def cmd_finetune(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    train, classes = _load(args.data, "train")
    test, _ = _load(args.data, "test", classes)
    train = _with_order(train, args.face_order, cfg.seed)
    test = _with_order(test, args.face_order, cfg.seed)
    if args.task == "seg":
        if any(s.face_labels is None for s in train + test):
            raise DataError("segmentation needs .labels for every mesh")
        n_out = int(max(s.face_labels.max() for s in train + test)) + 1
        model = Segmenter(cfg.model, n_out, seed=cfg.seed)
    else:
        n_out = len(classes)
        model = Classifier(cfg.model, n_out, seed=cfg.seed)
    state = _pretrained_state(args.init)
    if state is not None:
        init_from_pretrained(model, state)
    fcfg = _finetune_config(cfg, args)
    try:
        result = finetune(model, train, fcfg, test)
    except FloatingPointError as e:
        log.error("%s", e)
        return EXIT_NUMERIC
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model, {"classes": classes, "task": args.task, "seed": cfg.seed,
                            "config_hash": cfg.digest(), "face_order": args.face_order})
    rows = [{"epoch": i + 1, "lr": lr, "train_loss": loss, "test_accuracy": acc}
            for i, (lr, loss, acc) in enumerate(zip(result.lr, result.train_loss,
                                                     result.test_accuracy))]
    summary = {"task": args.task, "init": args.init, "face_order": args.face_order,
               "final_test_accuracy": result.test_accuracy[-1], "seed": cfg.seed,
               "config_hash": cfg.digest()}
    _write_metrics(out, rows, summary)
    _record(out, args, cfg, final_test_accuracy=result.test_accuracy[-1])
    print(f"{args.task} fine-tune: test accuracy {result.test_accuracy[-1]:.2f}%; saved {out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    train, classes = _load(args.data, "train")
    test, _ = _load(args.data, "test", classes)
    model = Classifier(cfg.model, len(classes), seed=cfg.seed)
    state = _pretrained_state(args.init)
    if state is not None:
        init_from_pretrained(model, state)
    model.encoder.freeze()
    p = cfg.probe
    res = linear_probe(model.encoder, train, test, len(classes), epochs=args.epochs or p.epochs,
                       lr=p.lr, weight_decay=p.weight_decay, seed=cfg.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = [{"split": "train", "accuracy": res.train_accuracy},
            {"split": "test", "accuracy": res.test_accuracy}]
    summary = {"init": args.init, "test_accuracy": res.test_accuracy,
               "head_parameters": res.head_parameters,
               "backbone_unchanged": res.backbone_before == res.backbone_after,
               "seed": cfg.seed, "config_hash": cfg.digest()}
    _write_metrics(out, rows, summary)
    _record(out, args, cfg, test_accuracy=res.test_accuracy)
    print(f"linear probe: test accuracy {res.test_accuracy:.2f}%")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    model, meta = load_model(args.ckpt)
    if meta.get("kind") not in ("cls", "seg"):
        raise UsageError(f"{args.ckpt}: eval needs a fine-tuned checkpoint")
    samples, _ = _load(args.data, args.split, meta.get("classes"))
    samples = _with_order(samples, meta.get("face_order", "original"), meta.get("seed", 0))
    acc = accuracy(model, samples)
    result = {"checkpoint": args.ckpt, "task": meta["kind"], "split": args.split,
              "meshes": len(samples), "accuracy": acc}
    if getattr(args, "out", None):
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_metrics(out, [result], result)
        _record(out, args, cfg, accuracy=acc)
    print(f"{meta['kind']} accuracy on {args.split}: {acc:.2f}% ({len(samples)} meshes)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    model, meta = load_model(args.ckpt)
    if meta.get("kind", "mae") != "mae":
        raise UsageError(f"{args.ckpt}: reconstruct needs a pretraining checkpoint")
    samples, _ = _split_or_all(args.data, args.split)
    samples = samples[:args.limit] if args.limit else samples
    rows = []
    for s in samples:
        for ratio in args.ratios:
            rec = export_reconstruction(model, s, out, ratio, cfg.seed)
            rows.append({"mesh": s.name, "ratio": ratio, "mean_chamfer": rec.mean_chamfer})
    with open(out / "reconstruction.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mesh", "ratio", "mean_chamfer"])
        w.writeheader()
        w.writerows(rows)
    _record(out, args, cfg, exports=len(rows))
    print(f"exported {len(rows)} reconstructions to {out}")
    return EXIT_OK


# ------------------------------------------------------------ ablate

ABLATE_FIELDS = ("mask_ratio", "lam", "pos_strategy", "face_order", "pretrain_loss",
                 "probe_accuracy", "finetune_accuracy")


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    train, classes = _load(args.data, "train")
    test, _ = _load(args.data, "test", classes)
    pcfg = _pretrain_config(cfg, args)
    fcfg = _finetune_config(cfg)
    grid = list(itertools.product(args.ratios, args.lambdas, args.pos, args.orders))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATE_FIELDS)
        w.writeheader()
        for ratio, lam, pos, order in grid:
            model_cfg = replace(cfg.model, pos_strategy=pos)
            tr = _with_order(train, order, cfg.seed)
            te = _with_order(test, order, cfg.seed)
            mae = MeshMAE(model_cfg, seed=cfg.seed)
            try:
                res = pretrain(mae, tr, replace(pcfg, mask_ratio=ratio, lam=lam))
                clf = Classifier(model_cfg, len(classes), seed=cfg.seed)
                init_from_pretrained(clf, mae.state_dict())
                clf.encoder.freeze()
                probe = linear_probe(clf.encoder, tr, te, len(classes), epochs=cfg.probe.epochs,
                                     lr=cfg.probe.lr, seed=cfg.seed)
                clf.encoder.freeze(False)
                ft = finetune(clf, tr, fcfg, te)
            except FloatingPointError as e:
                log.error("cell %s: %s", (ratio, lam, pos, order), e)
                return EXIT_NUMERIC
            row = {"mask_ratio": ratio, "lam": lam, "pos_strategy": pos, "face_order": order,
                   "pretrain_loss": res.losses[-1], "probe_accuracy": probe.test_accuracy,
                   "finetune_accuracy": ft.test_accuracy[-1]}
            w.writerow(row)
            fh.flush()
            log.info("ablate %s", row)
    _record(out, args, cfg, cells=len(grid))
    print(f"wrote {len(grid)} ablation rows to {out}")
    return EXIT_OK


# ------------------------------------------------------------ parser

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _choices(allowed, resolve=None):
    def parse(text: str) -> list[str]:
        items = [x for x in text.split(",") if x]
        out = []
        for x in items:
            try:
                out.append(resolve(x) if resolve else x)
            except ValueError as e:
                raise argparse.ArgumentTypeError(str(e))
            if out[-1] not in allowed:
                raise argparse.ArgumentTypeError(f"{x!r} not in {allowed}")
        return out
    return parse


def build_parser() -> argparse.ArgumentParser:
    from .transformer import resolve_strategy

    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML run configuration")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    preset = g.add_mutually_exclusive_group()
    preset.add_argument("--desk-config", dest="preset", action="store_const", const="desk",
                        default=argparse.SUPPRESS, help="small model (default)")
    preset.add_argument("--paper-config", dest="preset", action="store_const", const="paper",
                        default=argparse.SUPPRESS, help="ViT-Base sized model")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="meshmae", parents=[common],
                     description="Masked autoencoder pretraining for triangle meshes.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--families", default="sphere,box,cylinder",
                   help=f"comma-separated, from {CLASS_FAMILIES + SEG_FAMILIES}")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--rotate", action="store_true", help="randomly orient every shape")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="remesh raw meshes into t-meshes")
    p.add_argument("--input", required=True)
    p.add_argument("--variants", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_preprocess)

    orders = _choices(FACE_ORDERS)
    p = sub.add_parser("pretrain", parents=[common], help="masked-autoencoder pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--pos-strategy", type=resolve_strategy)
    p.add_argument("--face-order", choices=FACE_ORDERS, default="original")
    p.add_argument("--log", help="CSV training log (default: next to the checkpoint)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="supervised fine-tuning")
    p.add_argument("--task", choices=("cls", "seg"), default="cls")
    p.add_argument("--data", required=True)
    p.add_argument("--init", default="scratch", help="pretraining checkpoint or 'scratch'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--face-order", choices=FACE_ORDERS, default="original")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("probe", parents=[common], help="linear probe on a frozen encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--init", default="random", help="pretraining checkpoint or 'random'")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval", parents=[common], help="evaluate a fine-tuned checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", parents=[common], help="export masked reconstructions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ratios", type=_floats, default=[0.5, 0.7, 0.8])
    p.add_argument("--limit", type=int, default=5)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", parents=[common], help="ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", type=_floats, default=[0.5])
    p.add_argument("--lambdas", type=_floats, default=[0.5])
    p.add_argument("--pos", type=_choices(POS_STRATEGIES, resolve_strategy),
                   default=["d_patch_center"])
    p.add_argument("--orders", type=orders, default=["original"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"meshmae {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MeshError, CheckpointError, FileNotFoundError, OSError) as e:
        print(f"meshmae {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, FloatingPointError) as e:
        print(f"meshmae {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"meshmae {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
