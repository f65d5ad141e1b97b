"""``fgssl`` command-line entry point.

Every command accepts ``--config FILE`` plus dotted overrides such as
``--train.steps 50`` or ``--aug.params.posterize.p 0.5``, writes a
``resolved_config.yaml`` snapshot into its output directory, and on failure
prints one line ``error[<category>]: <message>`` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data import MANIFEST_NAME, DatasetManifest, FolderDataset, ingest, load_image, write_image_folder
from .encoder.checkpoint import load_encoder
from .errors import ConfigError, DataError, FgsslError
from .fewshot_eval import (
    EpisodeSpec,
    embed_dataset,
    knn_eval,
    read_embeddings,
    run_fewshot,
    write_embeddings,
    write_manifest,
)
from .preview import preview_panels, render_grid
from .synthetic import CLASS_NAMES, make_shapes
from .train_engine import train_loop

log = logging.getLogger("fgssl")

COMMANDS = ("ingest", "make-synthetic", "train", "contrastive-train", "embed", "eval", "aug-preview")

EXIT_CODES = {"config": 2, "invalid-input": 3, "data": 4, "training-diverged": 5, "error": 1, "internal": 70}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fgssl", description="Self-supervised pretraining and few-shot evaluation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML run config (a resolved_config.yaml snapshot works too)")
        sp.add_argument("--out", help="output directory (default: $%s/<command>)" % C.OUTPUT_ROOT_ENV)
        sp.add_argument("--seed", type=int)
        return sp

    sp = add("ingest", "scan an image-folder dataset and write its manifest")
    sp.add_argument("root", nargs="?")

    sp = add("make-synthetic", "write the procedural shapes dataset as PNG class folders")
    sp.add_argument("root", nargs="?", help="destination (default: <out>/images)")

    for name in ("train", "contrastive-train"):
        sp = add(name, "teacher-student pretraining" if name == "train" else "single-encoder SimCLR/SupCon training")
        sp.add_argument("--dataset")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--aug-preset")
        sp.add_argument("--resume")

    sp = add("embed", "write CLS embeddings for a dataset")
    sp.add_argument("--checkpoint")
    sp.add_argument("--dataset")

    sp = add("eval", "SimpleShot episodes or kNN on embedding files")
    sp.add_argument("embeddings", nargs="*")
    sp.add_argument("--protocol", choices=("simpleshot", "knn"))
    sp.add_argument("--shots", help="comma-separated, e.g. 1,5")

    sp = add("aug-preview", "render a grid of augmentation panels for one image")
    sp.add_argument("image", nargs="?")
    sp.add_argument("--aug-preset")
    return p


def _shortcut_overrides(args) -> list[tuple[str, object]]:
    mapping = {
        "out": "output_dir",
        "seed": "seed",
        "dataset": "dataset",
        "steps": "train.steps",
        "aug_preset": "aug.preset",
        "resume": "train.resume",
        "checkpoint": "embed.checkpoint",
        "protocol": "eval.protocol",
    }
    out = []
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out.append((key, value))
    if getattr(args, "shots", None):
        try:
            out.append(("eval.shots", [int(s) for s in args.shots.split(",") if s.strip()]))
        except ValueError as exc:
            raise ConfigError(f"--shots expects comma-separated integers, got {args.shots!r}") from exc
    if getattr(args, "embeddings", None):
        out.append(("eval.embeddings", list(args.embeddings)))
    if getattr(args, "image", None):
        out.append(("preview.image", args.image))
    if getattr(args, "root", None) and args.command == "ingest":
        out.append(("dataset", args.root))
    return out


def _split_dotted(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate ``--a.b value`` overrides so positionals never swallow their values."""
    plain, dotted = [], []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            take = 1 if "=" in tok else 2
            dotted += argv[i : i + take]
            i += take
        else:
            plain.append(tok)
            i += 1
    return plain, dotted


# ---------------------------------------------------------------------------
# dataset helpers


def _load_manifest(path) -> DatasetManifest:
    if path is None:
        raise ConfigError("no dataset given (use --dataset or dataset: in the config)")
    p = Path(path)
    if p.is_file():
        return DatasetManifest.read(p)
    if (p / MANIFEST_NAME).is_file() and not any(c.is_dir() for c in p.iterdir()):
        return DatasetManifest.read(p / MANIFEST_NAME)
    return ingest(p)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg, out_dir: Path) -> dict:
    manifest = ingest(cfg["dataset"] if cfg["dataset"] else _missing("dataset root"))
    path = manifest.write(out_dir / MANIFEST_NAME)
    return {"manifest": str(path), "classes": len(manifest.classes), "samples": manifest.total}


def _missing(what: str):
    raise ConfigError(f"missing {what}")


def cmd_make_synthetic(cfg, out_dir: Path, root=None) -> dict:
    s = cfg["synthetic"]
    images, labels = make_shapes(s["per_class"], s["size"], cfg["seed"], s["n_classes"])
    root = Path(root) if root else out_dir / "images"
    manifest = write_image_folder(root, images, labels, CLASS_NAMES)
    manifest.write(out_dir / MANIFEST_NAME)
    return {"root": str(root), "classes": len(manifest.classes), "samples": manifest.total}


def cmd_train(cfg, out_dir: Path, mode: str) -> dict:
    tcfg = C.train_config(cfg)
    dataset = FolderDataset(_load_manifest(cfg["dataset"]))
    resume = cfg["train"]["resume"]
    result = train_loop(tcfg, dataset, out_dir, mode=mode, resume=resume)
    last = result.metrics[-1] if result.metrics else {}
    return {"checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path), "steps": result.state.step, "last": last}


def cmd_embed(cfg, out_dir: Path) -> dict:
    e = cfg["embed"]
    if not e["checkpoint"]:
        raise ConfigError("no checkpoint given (use --checkpoint or embed.checkpoint)")
    params = load_encoder(e["checkpoint"], e["which"])
    enc = params.config
    resolution = e["resolution"] or enc.global_size
    if resolution % enc.patch_size:
        raise ConfigError(f"embed.resolution {resolution} is not a multiple of the checkpoint's patch size {enc.patch_size}")
    manifest = _load_manifest(cfg["dataset"])
    table, skipped = embed_dataset(params, FolderDataset(manifest, cache=False), resolution, cfg["workers"])
    path = write_embeddings(out_dir / e["output"], table)
    write_manifest(path, len(table), skipped)
    return {"embeddings": str(path), "rows": len(table), "skipped": len(skipped), "dim": table.dim}


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def cmd_eval(cfg, out_dir: Path) -> dict:
    ev = cfg["eval"]
    files = ev["embeddings"]
    if not files:
        raise ConfigError("no embedding files given")
    tables = {str(f): read_embeddings(f) for f in files}
    dims = {t.dim for t in tables.values()}
    if len(dims) > 1:
        raise DataError(f"embedding files have different dimensions {sorted(dims)}")
    report = {"protocol": ev["protocol"], "hyperparameters": {}, "results": []}
    lines = []
    if ev["protocol"] == "simpleshot":
        shots = [int(s) for s in ev["shots"]]
        report["hyperparameters"] = {k: ev[k] for k in ("shots", "n_way", "m_query", "n_episodes", "metric", "renormalize")}
        report["hyperparameters"]["seed"] = cfg["seed"]
        lines.append("dataset | " + " | ".join(f"{k}-shot" for k in shots))
        for name, table in tables.items():
            n_way = ev["n_way"] or len(table.classes)
            cells = []
            for k in shots:
                spec = EpisodeSpec(n_way, k, ev["m_query"], ev["n_episodes"], cfg["seed"])
                res = run_fewshot(table, spec, ev["metric"], ev["renormalize"])
                report["results"].append(
                    {"dataset": name, "shots": k, "n_way": n_way, "mean": res.mean, "std": res.std, "accuracies": res.accuracies}
                )
                cells.append(f"{_pct(res.mean)} ± {_pct(res.std)}")
            lines.append(f"{name} | " + " | ".join(cells))
    elif ev["protocol"] == "knn":
        if len(files) != 2:
            raise ConfigError("kNN evaluation takes exactly two embedding files: train then val")
        train, val = tables[str(files[0])], tables[str(files[1])]
        res = knn_eval(train, val, ev["k"], ev["tau"])
        report["hyperparameters"] = {"k": ev["k"], "tau": ev["tau"]}
        report["results"].append({"train": str(files[0]), "val": str(files[1]), "top1": res.accuracy})
        lines.append(f"kNN top-1 (k={ev['k']}, tau={ev['tau']}): {_pct(res.accuracy)}")
    else:
        raise ConfigError(f"unknown protocol {ev['protocol']!r}; use simpleshot or knn")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return {"report": str(out_dir / "report.json")}


def cmd_aug_preview(cfg, out_dir: Path) -> dict:
    pv = cfg["preview"]
    if not pv["image"]:
        raise ConfigError("no image given")
    policy = C.aug_policy(cfg)
    img = load_image(pv["image"])
    panels = preview_panels(img, policy, cfg["seed"], pv["n_global"], pv["n_local"], pv["tile"])
    grid = render_grid(panels)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"aug_preview_{policy.name}.png"
    grid.save(path, format="PNG", optimize=False, compress_level=6)
    labels = [label for label, _ in panels]
    (out_dir / f"aug_preview_{policy.name}.json").write_text(json.dumps({"preset": policy.name, "panels": labels}, indent=2) + "\n")
    return {"grid": str(path), "panels": labels}


def run(argv: list[str] | None = None) -> dict:
    """Parse ``argv`` and run the command; raises :class:`FgsslError` on failure."""
    parser = _parser()
    argv, dotted = _split_dotted(list(sys.argv[1:] if argv is None else argv))
    args, rest = parser.parse_known_args(argv)
    rest += dotted
    overrides = _shortcut_overrides(args) + C.parse_overrides(rest)
    cfg = C.build_config(args.config, overrides)
    out_dir = C.output_dir(cfg, args.command)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    C.write_snapshot(cfg, out_dir, args.command)
    if args.command == "ingest":
        return cmd_ingest(cfg, out_dir)
    if args.command == "make-synthetic":
        return cmd_make_synthetic(cfg, out_dir, args.root)
    if args.command == "train":
        return cmd_train(cfg, out_dir, "simdino")
    if args.command == "contrastive-train":
        return cmd_train(cfg, out_dir, "contrastive")
    if args.command == "embed":
        return cmd_embed(cfg, out_dir)
    if args.command == "eval":
        return cmd_eval(cfg, out_dir)
    if args.command == "aug-preview":
        return cmd_aug_preview(cfg, out_dir)
    raise ConfigError(f"unknown command {args.command!r}")


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(
        level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        summary = run(argv)
    except FgsslError as exc:
        print(f"error[{exc.category}]: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except KeyboardInterrupt:
        print("error[interrupted]: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001
        print(f"error[internal]: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CODES["internal"]
    print(json.dumps(summary, default=_json_default))
    return 0


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


if __name__ == "__main__":
    sys.exit(main())
