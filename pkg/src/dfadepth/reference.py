"""Seeded reference run on the toy victims.

Every stage caches its product under one directory (victims, artifacts,
reports), so the acceptance suite pays for training only once. Rerunning
with the same settings reproduces the cached files byte for byte.

    python -m dfadepth.reference --cache reference_cache --summary reference
"""

import argparse
import json
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import generate_scenes
from .evaluation import (cross_data_eval, evaluate_attack, evaluate_fgsm, patch_damage_split,
                         reports_to_csv, transfer_matrix)
from .model import TrainConfig, forward, load_model, save_model, train_toy_model
from .patch import (PatchArtifact, load_patch, patch_side_for_fraction, save_patch, train_patch)
from .perturbation import (AttackConfig, PerturbationArtifact, load_perturbation,
                           save_perturbation, train_perturbation)
from .viz import feature_statistics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceConfig:
    train_count: int = 1000
    train_seed: int = 1
    eval_count: int = 200
    eval_seed: int = 1000
    foreign_dist: str = "B"
    foreign_count: int = 200
    foreign_seed: int = 2000
    victim_seeds: tuple = (7, 8)
    epochs: int = 8
    target_l1: float = 3.0
    etas: tuple = (0.01, 0.05, 0.1)
    patch_fractions: tuple = (0.005, 0.01, 0.02)
    steps: int = 3000
    attack_seed: int = 0
    loss_seeds: tuple = tuple(range(10))
    placement_seed: int = 0


class Reference:
    """Lazy, cached access to every product of the reference run."""

    def __init__(self, cache_dir, config=None):
        self.cache_dir = str(cache_dir)
        self.config = config or ReferenceConfig()
        os.makedirs(self.cache_dir, exist_ok=True)
        self._data = {}

    def _path(self, *parts):
        return os.path.join(self.cache_dir, *parts)

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        out = fn()
        timings = self.recorded_timings()
        timings[key] = time.perf_counter() - t0
        with open(self._path("timings.json"), "w") as f:
            json.dump(timings, f, indent=1, sort_keys=True)
        return out

    def recorded_timings(self):
        """Wall-clock seconds of every training job that produced a cached file."""
        path = self._path("timings.json")
        if not os.path.exists(path):
            return {}
        with open(path) as f:
            return json.load(f)

    # datasets are cheap to regenerate, so they are never cached on disk
    def dataset(self, which):
        if which not in self._data:
            c = self.config
            spec = {"train": ("A", c.train_count, c.train_seed),
                    "eval": ("A", c.eval_count, c.eval_seed),
                    "foreign": (c.foreign_dist, c.foreign_count, c.foreign_seed)}[which]
            self._data[which] = generate_scenes(spec[0], spec[1], seed=spec[2])
        return self._data[which]

    def victim(self, seed):
        path = self._path(f"victim_seed{seed}")
        if not os.path.exists(os.path.join(path, "manifest.json")):
            tc = TrainConfig(max_epochs=self.config.epochs, target_l1=self.config.target_l1)
            logger.info("training victim seed %d", seed)
            model = self._timed(f"victim_seed{seed}",
                                lambda: train_toy_model(self.dataset("train"), tc, seed))
            save_model(model, path)
            with open(os.path.join(path, "history.json"), "w") as f:
                json.dump(model.history, f, indent=1)
        model = load_model(path)
        with open(os.path.join(path, "history.json")) as f:
            model.history = json.load(f)
        return model

    def perturbation(self, eta, victim_seed=None, attack_seed=None):
        victim_seed = self.config.victim_seeds[0] if victim_seed is None else victim_seed
        attack_seed = self.config.attack_seed if attack_seed is None else attack_seed
        path = self._path("artifacts", f"pert_v{victim_seed}_eta{eta:g}_s{attack_seed}.dfap")
        if not os.path.exists(path):
            victim = self.victim(victim_seed)
            cfg = AttackConfig(steps=self.config.steps)
            logger.info("training perturbation eta=%g victim=%d seed=%d", eta, victim_seed, attack_seed)
            art, _, curve = self._timed(
                os.path.basename(path),
                lambda: train_perturbation(victim, self.dataset("train"), "global", eta, cfg,
                                           attack_seed))
            art.provenance["curve_start"] = curve[0]
            art.provenance["curve_end"] = curve[-1]
            os.makedirs(os.path.dirname(path), exist_ok=True)
            save_perturbation(art, path)
        return load_perturbation(path)

    def patch_side(self, fraction):
        return patch_side_for_fraction(fraction, self.dataset("eval").image_shape)

    def patch(self, fraction, victim_seed=None):
        victim_seed = self.config.victim_seeds[0] if victim_seed is None else victim_seed
        side = self.patch_side(fraction)
        path = self._path("artifacts", f"patch_v{victim_seed}_side{side}_s{self.config.attack_seed}.dfap")
        if not os.path.exists(path):
            victim = self.victim(victim_seed)
            cfg = AttackConfig(steps=self.config.steps)
            logger.info("training patch side=%d victim=%d", side, victim_seed)
            art, _ = self._timed(
                os.path.basename(path),
                lambda: train_patch(victim, self.dataset("train"), side, cfg, self.config.attack_seed))
            os.makedirs(os.path.dirname(path), exist_ok=True)
            save_patch(art, path)
        return load_patch(path)

    # -- reports -----------------------------------------------------------

    def evaluate(self, victim, artifact):
        return evaluate_attack(victim, artifact, self.dataset("eval"), self.config.placement_seed)

    def controls(self):
        """Null perturbation (eta = 0) and zero-area patch controls."""
        victim = self.victim(self.config.victim_seeds[0])
        null_pert = PerturbationArtifact.zeros(self.dataset("eval").image_shape, eta=0.0)
        empty_patch = PatchArtifact(np.zeros((0, 0, 3), np.float32))
        return (self.evaluate(victim, null_pert), self.evaluate(victim, empty_patch))

    def fgsm(self, eta=0.05):
        victim = self.victim(self.config.victim_seeds[0])
        return evaluate_fgsm(victim, eta, self.dataset("eval"), self.config.attack_seed)

    def transfer(self):
        victims = [self.victim(s) for s in self.config.victim_seeds]
        arts = []
        for s in self.config.victim_seeds:
            arts.append(self.perturbation(0.05, s))
            arts.append(self.patch(0.01, s))
        return transfer_matrix(victims, arts, self.dataset("eval"), self.config.placement_seed)

    def cross_data(self):
        victim = self.victim(self.config.victim_seeds[0])
        return [cross_data_eval(victim, art, self.dataset("foreign"), self.config.placement_seed)
                for art in (self.perturbation(0.05), self.patch(0.01))]

    def damage_split(self):
        victim = self.victim(self.config.victim_seeds[0])
        return patch_damage_split(victim, self.patch(0.01), self.dataset("eval"),
                                  self.config.placement_seed)

    def loss_decrease(self):
        """Probe-batch loss before / after training for every seed in ``loss_seeds``."""
        out = []
        for seed in self.config.loss_seeds:
            prov = self.perturbation(0.05, attack_seed=seed).provenance
            out.append((seed, prov["probe_loss_start"], prov["probe_loss_end"]))
        return out

    def feature_variance_drop(self, n_images=20):
        """Fraction of tapped decoder layers whose product variance falls under attack.

        Averaged over the first ``n_images`` evaluation scenes.
        """
        victim = self.victim(self.config.victim_seeds[0])
        art = self.perturbation(0.05)
        images = self.dataset("eval").images[:n_images]
        attacked = np.clip(images + np.float32(art.eta) * art.alpha, 0, 1).astype(np.float32)
        lowered = {}
        for clean, adv in zip(images, attacked):
            _, f_clean = forward(victim, clean, capture_features=True)
            _, f_adv = forward(victim, adv, capture_features=True)
            stats = feature_statistics(f_clean, f_adv)
            for layer, s in stats.items():
                if layer.startswith("dec"):
                    lowered.setdefault(layer, []).append(s["var_product_attacked"] < s["var_product_clean"])
        per_layer = {k: float(np.mean(v)) for k, v in lowered.items()}
        return per_layer, float(np.mean([v > 0.5 for v in per_layer.values()]))

    # -- full run ----------------------------------------------------------

    def run(self):
        """Compute every reference number; returns ``(summary_dict, reports)``."""
        c = self.config
        reports = []
        pert = {}
        for eta in c.etas:
            r = self.evaluate(self.victim(c.victim_seeds[0]), self.perturbation(eta))
            pert[f"{eta:g}"] = r.rel_degradation
            reports.append(r)
        patch = {}
        for frac in c.patch_fractions:
            r = self.evaluate(self.victim(c.victim_seeds[0]), self.patch(frac))
            patch[f"{frac:g}"] = {"side": self.patch_side(frac), "rel": r.rel_degradation}
            reports.append(r)
        fgsm = self.fgsm()
        reports.append(fgsm)
        null_pert, zero_patch = self.controls()
        tm = self.transfer()
        cross = self.cross_data()
        reports.extend(cross)
        layers, frac_dec = self.feature_variance_drop()
        summary = {
            "config": asdict(self.config),
            "victims": {v.model_id: v.history[-1] for v in (self.victim(s) for s in c.victim_seeds)},
            "perturbation_rel": pert,
            "patch_rel": patch,
            "fgsm_rel": fgsm.rel_degradation,
            "null_perturbation_rel": null_pert.rel_degradation,
            "zero_patch_rel": zero_patch.rel_degradation,
            "transfer": {"/".join(k): (None if v is None else v.rel_degradation_pct)
                         for k, v in tm.cells.items()},
            "cross_data_rel": [r.rel_degradation for r in cross],
            "damage_split": self.damage_split(),
            "loss_decrease": self.loss_decrease(),
            "decoder_variance_drop": {"per_layer": layers, "fraction": frac_dec},
        }
        return summary, reports, tm


def write_summary(summary, reports, tm, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "reference_results.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    with open(os.path.join(out_dir, "reference_reports.csv"), "w", newline="") as f:
        f.write(reports_to_csv(reports))
    with open(os.path.join(out_dir, "reference_transfer.csv"), "w", newline="") as f:
        f.write(tm.to_csv())


def main(argv=None):
    parser = argparse.ArgumentParser(description="run or refresh the cached reference run")
    parser.add_argument("--cache", default=os.environ.get("DFA_REFERENCE_DIR", "reference_cache"))
    parser.add_argument("--summary", default="reference")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    ref = Reference(args.cache)
    summary, reports, tm = ref.run()
    write_summary(summary, reports, tm, args.summary)
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
