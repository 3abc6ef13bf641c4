"""Command-line front end: ``popood {build-prototypes,gen-data,train,eval,toy}``.

Settings resolve as built-in defaults < ``--config`` JSON file < explicit flags;
the resolved set is always written to ``config-<command>.json`` in the output
directory.
Wall-clock timestamps go only to the ``run.log`` sidecar so every other output
is byte-identical across repeated runs.

Exit codes: 0 success, 2 config/validation error, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import SynthSpec, generate, load_dataset, save_dataset
from .errors import FormatError, InvalidArgumentError, NotPSDError, NumericalError, PopError
from .evaluator import SCORE_KINDS, compute_score, metrics_from_scores, write_reports, write_score_dump
from .hierarchy import (
    augment_with_proxies,
    build_distance_matrix,
    distance_to_similarity,
    resolve_tree,
    save_distance_matrix,
    save_similarity_matrix,
)
from .losses import LossConfig, default_beta
from .netcore import forward, init_params, load_checkpoint, save_checkpoint
from .prototypes import factor_similarity, load_prototypes, save_prototypes
from .toy import CONFIGS, ToySettings, run_toy
from .trainer import TrainConfig, train

CONFIG_VERSION = 1
OUT_ENV = "POPOOD_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(PopError, ValueError):
    pass


# name -> (default, type, help); flags are derived from names (underscores become dashes)
COMMON = {
    "seed": (0, int, "random seed"),
    "out": (None, str, f"output directory (default: ${OUT_ENV} or ./popood-out)"),
}

BUILD = {
    "tree": ("five", str, "built-in tree name (toy3, cifar10, five) or path to a tree file"),
    "proxies": (2, int, "number of outlier proxies C"),
    "distance": (None, float, "proxy distance d; must exceed d_max (default: d_max + 1)"),
    "rotation_seed": (None, int, "seed for a random orthogonal rotation of the prototypes (default: identity)"),
}

GEN = {
    "tree": ("five", str, "built-in tree name or tree file"),
    "input_dim": (8, int, "input dimension"),
    "n_train": (200, int, "training samples per class"),
    "n_test": (100, int, "test samples per class"),
    "n_ood": (500, int, "total OOD samples"),
    "stddev": (0.3, float, "cluster standard deviation"),
    "mean_scale": (2.0, float, "mean separation per unit of LCA distance"),
    "ood_mode": ("far", str, "far or near"),
    "ood_radius_factor": (3.0, float, "far-OOD radius as a multiple of the ID mean spread radius"),
}

TRAIN = {
    "tree": ("five", str, "built-in tree name or tree file"),
    "proxies": (2, int, "number of outlier proxies C"),
    "distance": (None, float, "proxy distance d (default: d_max + 1)"),
    "data": (None, str, "directory holding id_train.csv (default: the output directory)"),
    "hidden": ("32,32", str, "comma-separated hidden layer widths"),
    "epochs": (100, int, "training epochs"),
    "batch_size": (32, int, "batch size"),
    "lr0": (0.05, float, "initial learning rate"),
    "momentum": (0.9, float, "SGD momentum"),
    "weight_decay": (1e-4, float, "weight decay"),
    "schedule": ("cosine", str, "cosine or constant"),
    "beta": (None, float, "loss scale beta (default: 10 for <=10 classes, else 5)"),
    "loss": ("hsbl", str, "hsbl or cosine-ce"),
    "denominator": ("exclude", str, "HSBL denominator: exclude (plain sum over j != y) or all"),
    "argmax_over": ("id", str, "prediction used for the margin: id or all"),
    "checkpoint_every": (0, int, "also write a checkpoint every N epochs (0: final only)"),
}

EVAL = {
    "run": (None, str, "training run directory (protos.csv, checkpoint.txt; default: the output directory)"),
    "data": (None, str, "directory holding id_test.csv and ood.csv (default: the run directory)"),
    "temperature": (1.0, float, "temperature for msp/energy"),
    "id_only_max": (False, bool, "restrict the POP score max to ID logits"),
}

TOY = {
    "epochs": (30, int, "training epochs"),
    "lr0": (0.1, float, "initial learning rate"),
    "hidden": (16, int, "hidden width"),
    "n_train": (200, int, "training samples per class"),
    "stddev": (0.4, float, "cluster standard deviation"),
    "distance": (4.0, float, "proxy distance"),
    "resolution": (101, int, "grid points per axis"),
    "bound": (4.0, float, "grid covers [-bound, bound]^2"),
}

COMMANDS = {
    "build-prototypes": BUILD,
    "gen-data": GEN,
    "train": TRAIN,
    "eval": EVAL,
    "toy": TOY,
}


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popood", description="Prototypical outlier proxies for OOD detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, table in COMMANDS.items():
        p = sub.add_parser(name, help=f"{name} (see --help)")
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file (flags override it)")
        for key, (default, typ, text) in {**table, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=_bool if typ is bool else typ, default=argparse.SUPPRESS,
                           help=f"{text} (default: {default})")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    table = {**COMMANDS[command], **COMMON}
    resolved = {k: v[0] for k, v in table.items()}
    provided = vars(args).copy()
    provided.pop("command", None)
    config_path = provided.pop("config", None)
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise FormatError(config_path, f"cannot read config: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        version = raw.pop("version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(f"{config_path}: unsupported config version {version!r} (expected {CONFIG_VERSION})")
        raw.pop("command", None)
        unknown = sorted(set(raw) - set(table))
        if unknown:
            raise ConfigError(f"{config_path}: unknown keys {unknown}")
        resolved.update(raw)
    resolved.update(provided)
    if resolved["out"] is None:
        resolved["out"] = os.environ.get(OUT_ENV, "popood-out")
    return resolved


def _write_config(out: Path, command: str, cfg: dict) -> None:
    payload = {"version": CONFIG_VERSION, "command": command, **cfg}
    (out / f"config-{command}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _log(out: Path, message: str) -> None:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with open(out / "run.log", "a") as fh:
        fh.write(f"{stamp} {message}\n")


def _proxy_distance(dist_matrix, requested):
    return dist_matrix.d_max + 1.0 if requested is None else float(requested)


def _build_protos(cfg: dict):
    tree = resolve_tree(cfg["tree"])
    dist = build_distance_matrix(tree)
    pop = augment_with_proxies(dist, cfg["proxies"], _proxy_distance(dist, cfg["distance"]))
    sim = distance_to_similarity(pop)
    return tree, pop, sim, factor_similarity(sim, cfg.get("rotation_seed"))


def cmd_build_prototypes(cfg: dict, out: Path) -> str:
    _, pop, sim, protos = _build_protos(cfg)
    save_distance_matrix(out / "distance.csv", pop)
    save_similarity_matrix(out / "similarity.csv", sim)
    save_prototypes(out / "protos.csv", protos)
    err = float(np.max(np.abs(protos.gram() - sim.entries)))
    return f"wrote {protos.num_classes} prototypes (dim {protos.dim}, d={pop.proxy_distance:g}, gram error {err:.2e})"


def cmd_gen_data(cfg: dict, out: Path) -> str:
    spec = SynthSpec(
        resolve_tree(cfg["tree"]), input_dim=cfg["input_dim"], n_train=cfg["n_train"], n_test=cfg["n_test"],
        n_ood=cfg["n_ood"], stddev=cfg["stddev"], seed=cfg["seed"], ood_mode=cfg["ood_mode"],
        mean_scale=cfg["mean_scale"], ood_radius_factor=cfg["ood_radius_factor"],
    )
    id_train, id_test, ood, means = generate(spec)
    save_dataset(out / "id_train.csv", id_train)
    save_dataset(out / "id_test.csv", id_test)
    save_dataset(out / "ood.csv", ood)
    np.savetxt(out / "means.csv", means, delimiter=",", fmt="%.17g")
    return f"wrote {len(id_train)} train / {len(id_test)} test / {len(ood)} OOD samples"


def _parse_hidden(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    try:
        dims = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InvalidArgumentError(f"hidden must be comma-separated integers, got {text!r}") from None
    return dims


def cmd_train(cfg: dict, out: Path) -> str:
    _, _, sim, protos = _build_protos({**cfg, "rotation_seed": None})
    data_dir = Path(cfg["data"]) if cfg["data"] else out
    data = load_dataset(data_dir / "id_train.csv")
    beta = cfg["beta"] if cfg["beta"] is not None else default_beta(protos.num_id)
    loss = LossConfig(beta, sim, cfg["loss"], cfg["denominator"], cfg["argmax_over"])
    tcfg = TrainConfig(loss, epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr0=cfg["lr0"],
                       momentum=cfg["momentum"], weight_decay=cfg["weight_decay"], schedule=cfg["schedule"],
                       seed=cfg["seed"])
    net = init_params([data.input_dim, *_parse_hidden(cfg["hidden"]), protos.dim], cfg["seed"])
    every = cfg["checkpoint_every"]

    def checkpoint(current, epoch):
        if every and epoch % every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch:04d}.txt", current, epoch)

    net, log = train(net, protos, data, tcfg, checkpoint)
    save_prototypes(out / "protos.csv", protos)
    save_checkpoint(out / "checkpoint.txt", net, cfg["epochs"])
    log.write_csv(out / "trainlog.csv")
    last = log.epochs[-1]
    return f"trained {cfg['epochs']} epochs: loss {last.mean_loss:.4f}, train acc {last.train_acc:.4f}"


def cmd_eval(cfg: dict, out: Path) -> str:
    run = Path(cfg["run"]) if cfg["run"] else out
    data_dir = Path(cfg["data"]) if cfg["data"] else run
    protos = load_prototypes(run / "protos.csv")
    net, _ = load_checkpoint(run / "checkpoint.txt")
    id_test = load_dataset(data_dir / "id_test.csv")
    ood = load_dataset(data_dir / "ood.csv")
    rec_id = forward(net, protos, id_test.inputs)
    rec_ood = forward(net, protos, ood.inputs)
    num_id = protos.num_id if cfg["id_only_max"] else None
    rows, reports = [], {}
    for kind in SCORE_KINDS:
        s_id = np.atleast_1d(compute_score(rec_id, kind, cfg["temperature"], num_id)) if len(id_test) else np.array([])
        s_ood = np.atleast_1d(compute_score(rec_ood, kind, cfg["temperature"], num_id)) if len(ood) else np.array([])
        rows += [(i, True, kind, v) for i, v in enumerate(s_id)]
        rows += [(len(id_test) + i, False, kind, v) for i, v in enumerate(s_ood)]
        reports[kind] = metrics_from_scores(s_id, s_ood)
    write_score_dump(out / "scores.csv", rows)
    write_reports(out, reports)
    return " | ".join(f"{k}: auroc {r.auroc:.4f} fpr95 {r.fpr95:.4f}" for k, r in reports.items())


def cmd_toy(cfg: dict, out: Path) -> str:
    settings = ToySettings(seed=cfg["seed"], epochs=cfg["epochs"], lr0=cfg["lr0"], hidden=cfg["hidden"],
                           n_train=cfg["n_train"], stddev=cfg["stddev"], proxy_distance=cfg["distance"],
                           bounds=(-cfg["bound"], cfg["bound"]), resolution=cfg["resolution"])
    result = run_toy(settings)
    for (name, mode), grid in result["grids"].items():
        np.savetxt(out / f"grid_{name}_{mode}.csv", grid, delimiter=",", fmt="%.17g")
    summary = {"beta": result["beta"], "configs": list(CONFIGS), "readings": result["readings"]}
    (out / "toy_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    r = result["readings"]
    return (f"intersection confidence (direct): fixed {r['fixed']['direct_intersection_confidence']:.4f}, "
            f"with proxy {r['proxy']['direct_intersection_confidence']:.4f}")


HANDLERS = {
    "build-prototypes": cmd_build_prototypes,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "toy": cmd_toy,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (NumericalError, NotPSDError)):
        return EXIT_NUMERIC
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    return EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        cfg = resolve(command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_config(out, command, cfg)
        message = HANDLERS[command](cfg, out)
    except (PopError, OSError, TypeError, KeyError) as exc:
        print(f"popood {command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    _log(out, f"{command}: {message}")
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
