"""Command-line entry point: ``dfadepth <subcommand> [flags]``."""

import argparse
import csv
import logging
import os
import sys


from . import config as cfg
from ._io import save_png
from .data import DISTRIBUTIONS, generate_scenes, load_dataset, save_dataset
from .errors import ArtifactFormatError
from .evaluation import (cross_data_eval, evaluate_attack, evaluate_fgsm, reports_to_csv,
                         transfer_matrix)
from .model import TrainConfig, config_dict, load_model, predict_depth, save_model, train_toy_model
from .patch import PATCH_MAGIC, PatchArtifact, apply_patch_batch, load_patch, save_patch, train_patch
from .perturbation import (PERTURBATION_MAGIC, AttackConfig, load_perturbation, perturb_images,
                           save_perturbation, train_perturbation)
from .viz import visualize_depth, visualize_depth_gap, visualize_features

logger = logging.getLogger("dfadepth")

DEFAULTS = {
    "out": None, "seed": 0, "data": None, "dist": "A", "count": 200, "data_seed": 1000,
    "eta": 0.05, "patch_side": 12, "steps": 3000, "lr": None, "epochs": 12,
    "batch_size": None, "target_l1": 3.0, "victim": None, "artifact": None,
    "scale_aug": False, "median_scaling": True, "mode": "global", "momentum": 0.0,
    "index": 0,
}


class CliError(Exception):
    pass


def _add_common(p):
    p.add_argument("--out", help="output directory (default: $DFA_OUT_DIR)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat TOML file with defaults for any flag")


def _add_data(p):
    p.add_argument("--data", help="dataset directory written by gen-data")
    p.add_argument("--dist", choices=DISTRIBUTIONS, help="distribution to generate when --data is absent")
    p.add_argument("--count", type=int)
    p.add_argument("--data-seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dfadepth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    _add_common(p)
    p.add_argument("--dist", choices=DISTRIBUTIONS)
    p.add_argument("--count", type=int)

    p = sub.add_parser("train-model", help="train a toy depth victim")
    _add_common(p)
    _add_data(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--target-l1", type=float)

    for name in ("train-perturbation", "train-patch"):
        p = sub.add_parser(name)
        _add_common(p)
        _add_data(p)
        p.add_argument("--victim")
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        if name == "train-perturbation":
            p.add_argument("--eta", type=float)
            p.add_argument("--mode", choices=("global", "image_specific"))
            p.add_argument("--momentum", type=float)
        else:
            p.add_argument("--patch-side", type=int)
            p.add_argument("--scale-aug", action="store_const", const=True)

    p = sub.add_parser("fgsm", help="evaluate the FGSM baseline")
    _add_common(p)
    _add_data(p)
    p.add_argument("--victim")
    p.add_argument("--eta", type=float)
    p.add_argument("--no-median-scaling", dest="median_scaling", action="store_const", const=False)

    for name in ("evaluate", "cross-data"):
        p = sub.add_parser(name)
        _add_common(p)
        _add_data(p)
        p.add_argument("--victim")
        p.add_argument("--artifact")
        p.add_argument("--no-median-scaling", dest="median_scaling", action="store_const", const=False)

    p = sub.add_parser("transfer-matrix", help="evaluate every artifact on every victim")
    _add_common(p)
    _add_data(p)
    p.add_argument("--victim", action="append", help="repeatable")
    p.add_argument("--artifact", action="append", help="repeatable")
    p.add_argument("--no-median-scaling", dest="median_scaling", action="store_const", const=False)

    p = sub.add_parser("visualize", help="depth, depth-gap and feature-map PNGs for one scene")
    _add_common(p)
    _add_data(p)
    p.add_argument("--victim")
    p.add_argument("--artifact")
    p.add_argument("--index", type=int)
    return parser


def _require(path, what):
    if not path:
        raise CliError(f"missing --{what}")
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def load_artifact(path):
    _require(path, "artifact")
    with open(path, "rb") as f:
        magic = f.read(8)
    if magic == PERTURBATION_MAGIC:
        return load_perturbation(path)
    if magic == PATCH_MAGIC:
        return load_patch(path)
    raise ArtifactFormatError(f"{path}: not a perturbation or patch file")


def _dataset(opts, default_dist=None):
    if opts["data"]:
        return load_dataset(_require(opts["data"], "data"))
    return generate_scenes(default_dist or opts["dist"], opts["count"], seed=opts["data_seed"])


def _write_reports(out, stem, reports):
    with open(os.path.join(out, f"{stem}.csv"), "w", newline="") as f:
        f.write(reports_to_csv(reports))
    with open(os.path.join(out, f"{stem}.jsonl"), "w") as f:
        f.writelines(r.to_json() + "\n" for r in reports)
    for r in reports:
        print(",".join(r.csv_row()))


def _write_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("step", "loss"))
        w.writerows((i, f"{v:.8g}") for i, v in enumerate(curve))


def cmd_gen_data(o):
    ds = generate_scenes(o["dist"], o["count"], seed=o["seed"])
    save_dataset(ds, o["out"])


def cmd_train_model(o):
    ds = _dataset(o)
    tc = TrainConfig(max_epochs=o["epochs"], learning_rate=o["lr"] or 1e-3,
                     batch_size=o["batch_size"] or 8, target_l1=o["target_l1"])
    model = train_toy_model(ds, tc, o["seed"])
    save_model(model, o["out"])
    cfg.write_snapshot(os.path.join(o["out"], "train_config.toml"), config_dict(tc))
    with open(os.path.join(o["out"], "history.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("epoch", "train_l1", "holdout_l1"))
        w.writerows((h["epoch"], f"{h['train_l1']:.6f}", f"{h['holdout_l1']:.6f}") for h in model.history)


def _attack_config(o, **extra):
    return AttackConfig(steps=o["steps"], learning_rate=o["lr"], batch_size=o["batch_size"] or 1,
                        seed=o["seed"], **extra)


def cmd_train_perturbation(o):
    victim = load_model(_require(o["victim"], "victim"))
    ds = _dataset(o)
    art, _, curve = train_perturbation(victim, ds, o["mode"], o["eta"],
                                       _attack_config(o, momentum=o["momentum"]), o["seed"])
    save_perturbation(art, os.path.join(o["out"], "perturbation.dfap"))
    _write_curve(os.path.join(o["out"], "loss_curve.csv"), curve)


def cmd_train_patch(o):
    victim = load_model(_require(o["victim"], "victim"))
    ds = _dataset(o)
    art, curve = train_patch(victim, ds, o["patch_side"],
                             _attack_config(o, scale_aug=bool(o["scale_aug"])), o["seed"])
    save_patch(art, os.path.join(o["out"], "patch.dfap"))
    _write_curve(os.path.join(o["out"], "loss_curve.csv"), curve)


def cmd_fgsm(o):
    victim = load_model(_require(o["victim"], "victim"))
    rep = evaluate_fgsm(victim, o["eta"], _dataset(o), o["seed"], o["median_scaling"])
    _write_reports(o["out"], "fgsm_report", [rep])


def cmd_evaluate(o):
    victim = load_model(_require(o["victim"], "victim"))
    art = load_artifact(o["artifact"])
    rep = evaluate_attack(victim, art, _dataset(o), o["seed"], o["median_scaling"])
    _write_reports(o["out"], "report", [rep])


def cmd_cross_data(o):
    victim = load_model(_require(o["victim"], "victim"))
    art = load_artifact(o["artifact"])
    foreign = _dataset(o, default_dist=o["dist"] if o["dist_given"] else "B")
    rep = cross_data_eval(victim, art, foreign, o["seed"], o["median_scaling"])
    _write_reports(o["out"], "cross_data_report", [rep])


def cmd_transfer_matrix(o):
    victims = [load_model(_require(p, "victim")) for p in (o["victim"] or [])]
    arts = [load_artifact(p) for p in (o["artifact"] or [])]
    if not victims:
        raise CliError("transfer-matrix needs at least one --victim")
    tm = transfer_matrix(victims, arts, _dataset(o), o["seed"], o["median_scaling"])
    with open(os.path.join(o["out"], "transfer.csv"), "w", newline="") as f:
        f.write(tm.to_csv())
    with open(os.path.join(o["out"], "transfer.jsonl"), "w") as f:
        f.write(tm.to_jsonl())
    sys.stdout.write(tm.to_csv())


def cmd_visualize(o):
    victim = load_model(_require(o["victim"], "victim"))
    ds = _dataset(o)
    if not 0 <= o["index"] < len(ds):
        raise CliError(f"--index {o['index']} out of range for {len(ds)} scenes")
    image = ds.images[o["index"]:o["index"] + 1]
    if o["artifact"]:
        art = load_artifact(o["artifact"])
        if isinstance(art, PatchArtifact):
            attacked = apply_patch_batch(image, art, o["seed"])[0]
        else:
            attacked = perturb_images(image, art)
    else:
        attacked = image
    clean_d, adv_d = predict_depth(victim, image)[0], predict_depth(victim, attacked)[0]
    out = o["out"]
    save_png(os.path.join(out, "image_clean.png"), image[0])
    save_png(os.path.join(out, "image_attacked.png"), attacked[0])
    visualize_depth(clean_d, os.path.join(out, "depth_clean.png"))
    visualize_depth(adv_d, os.path.join(out, "depth_attacked.png"))
    visualize_depth_gap(clean_d, adv_d, os.path.join(out, "depth_gap.png"))
    visualize_features(victim, image[0], attacked[0], os.path.join(out, "features"))


COMMANDS = {
    "gen-data": cmd_gen_data, "train-model": cmd_train_model,
    "train-perturbation": cmd_train_perturbation, "train-patch": cmd_train_patch,
    "fgsm": cmd_fgsm, "evaluate": cmd_evaluate, "transfer-matrix": cmd_transfer_matrix,
    "cross-data": cmd_cross_data, "visualize": cmd_visualize,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        opts = cfg.resolve(DEFAULTS, cfg.load_config(args.config), flags)
        opts["dist_given"] = flags.get("dist") is not None
        opts["out"] = opts["out"] or os.environ.get("DFA_OUT_DIR")
        if not opts["out"]:
            raise CliError("no output directory: pass --out or set DFA_OUT_DIR")
        os.makedirs(opts["out"], exist_ok=True)
        snapshot = {k: v for k, v in opts.items() if k != "dist_given"}
        snapshot["command"] = args.command
        cfg.write_snapshot(os.path.join(opts["out"], "resolved_config.toml"), snapshot)
        COMMANDS[args.command](opts)
    except Exception as exc:  # reported as one diagnostic line
        print(f"dfadepth {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
