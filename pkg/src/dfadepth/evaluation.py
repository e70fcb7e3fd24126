"""Depth metrics and attack evaluation reports.

Predictions are median-scaled against ground truth per image and capped to the
model's depth range before RMSE / AbsRel are taken over valid pixels.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError
from .model import predict_depth
from .patch import PatchArtifact, apply_patch_batch
from .perturbation import PerturbationArtifact, fgsm_images, perturb_images
from .types import DepthMap

CSV_COLUMNS = ("victim", "source_model", "attack_type", "eta_or_size", "rmse_clean",
               "rmse_att", "rel_pct", "absrel_clean", "absrel_att", "n_images", "seed")


def _as_depth(d):
    return d if isinstance(d, DepthMap) else DepthMap(np.asarray(d, dtype=np.float64))


def _aligned(pred, gt, median_scaling):
    pred, gt = _as_depth(pred), _as_depth(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt.valid_mask
    if not valid.any():
        raise ValueError("ground truth has no valid pixels")
    p = pred.data[valid].astype(np.float64)
    g = gt.data[valid].astype(np.float64)
    if np.any(g <= 0):
        raise ValueError("ground truth depth must be positive")
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    return np.clip(p, pred.d_min, pred.d_max), g


def rmse(pred, gt, median_scaling=True):
    """Root mean squared depth error over valid ground-truth pixels (meters)."""
    p, g = _aligned(pred, gt, median_scaling)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def absrel(pred, gt, median_scaling=True):
    """Mean of ``|pred - gt| / gt`` over valid ground-truth pixels."""
    p, g = _aligned(pred, gt, median_scaling)
    return float(np.mean(np.abs(p - g) / g))


def rel_degradation(clean_metric, attacked_metric):
    """Percent increase of ``attacked_metric`` over ``clean_metric`` (unrounded)."""
    if not clean_metric > 0:
        raise ValueError("clean metric must be positive")
    return 100.0 * (attacked_metric - clean_metric) / clean_metric


def round_pct(value):
    """Nearest integer, halves rounded away from zero."""
    return int(np.sign(value) * np.floor(abs(value) + 0.5))


@dataclass
class MetricReport:
    victim: str
    source_model: str
    attack_type: str
    eta_or_size: float
    rmse_clean: float
    rmse_attacked: float
    absrel_clean: float
    absrel_attacked: float
    rel_degradation: float
    n_images: int
    seed: int
    provenance: dict = field(default_factory=dict)

    @property
    def rel_degradation_pct(self):
        return round_pct(self.rel_degradation)

    def csv_row(self):
        return [self.victim, self.source_model, self.attack_type, f"{self.eta_or_size:g}",
                f"{self.rmse_clean:.4f}", f"{self.rmse_attacked:.4f}",
                str(self.rel_degradation_pct), f"{self.absrel_clean:.4f}",
                f"{self.absrel_attacked:.4f}", str(self.n_images), str(self.seed)]

    def to_json(self):
        d = asdict(self)
        d["rel_degradation_pct"] = self.rel_degradation_pct
        return json.dumps(d, sort_keys=True)


def per_image_metrics(pred, gt, masks=None, d_range=(1.0, 80.0), median_scaling=True):
    """(N, 2) array of per-image RMSE and AbsRel."""
    out = np.empty((len(pred), 2))
    for i in range(len(pred)):
        valid = None if masks is None else masks[i]
        p = DepthMap(pred[i], None, *d_range)
        g = DepthMap(gt[i], valid, *d_range)
        out[i] = rmse(p, g, median_scaling), absrel(p, g, median_scaling)
    return out


def _attack_images(artifact, images, seed):
    if isinstance(artifact, PerturbationArtifact):
        kind = "perturbation" if artifact.mode == "global" else "perturbation-image"
        return perturb_images(images, artifact), kind, artifact.eta, None
    if isinstance(artifact, PatchArtifact):
        patched, masks, _ = apply_patch_batch(images, artifact, seed)
        return patched, "patch", artifact.side, masks
    raise TypeError(f"unsupported artifact type {type(artifact).__name__}")


def _report(victim, eval_set, attacked, attack_type, param, source, seed, median_scaling, tags):
    d_range = (victim.d_min, victim.d_max)
    clean = predict_depth(victim, eval_set.images)
    adv = predict_depth(victim, attacked)
    m_clean = per_image_metrics(clean, eval_set.depths, eval_set.valid_masks, d_range, median_scaling)
    m_adv = per_image_metrics(adv, eval_set.depths, eval_set.valid_masks, d_range, median_scaling)
    rc, ra = m_clean.mean(axis=0), m_adv.mean(axis=0)
    provenance = {"distribution": eval_set.distribution_id, "eval_seed": int(eval_set.seed),
                  "median_scaling": bool(median_scaling), **tags}
    return MetricReport(victim.model_id, source, attack_type, float(param),
                        float(rc[0]), float(ra[0]), float(rc[1]), float(ra[1]),
                        rel_degradation(rc[0], ra[0]), len(eval_set), int(seed), provenance)


def evaluate_attack(victim, artifact, eval_set, seed=0, median_scaling=True):
    """Clean vs attacked metrics of ``victim`` on ``eval_set``, averaged per image.

    Patches are pasted at one placement per image drawn from ``seed``.
    """
    if eval_set is None or len(eval_set) == 0:
        raise ValueError("evaluation set is empty")
    images = victim.check_input(eval_set.images)
    attacked, kind, param, _ = _attack_images(artifact, images, seed)
    source = artifact.provenance.get("victim") or "none"
    tags = {"artifact": artifact.provenance}
    return _report(victim, eval_set, attacked, kind, param, source, seed, median_scaling, tags)


def evaluate_fgsm(victim, eta, eval_set, seed=0, median_scaling=True):
    images = victim.check_input(eval_set.images)
    attacked = fgsm_images(victim, images, eta, seed)
    return _report(victim, eval_set, attacked, "fgsm", eta, victim.model_id, seed,
                   median_scaling, {})


def cross_data_eval(victim, artifact, foreign_set, seed=0, median_scaling=True):
    """``evaluate_attack`` on a foreign distribution, tagged as cross-data."""
    if foreign_set is None or len(foreign_set) == 0:
        raise ValueError("foreign evaluation set is empty")
    report = evaluate_attack(victim, artifact, foreign_set, seed, median_scaling)
    report.provenance["tag"] = "cross-data"
    return report


def patch_damage_split(victim, artifact, eval_set, seed=0, median_scaling=True):
    """Split patch damage between pixels inside and outside the pasted patch.

    Per image, the median scale is fit on all valid pixels, then squared
    errors are pooled separately over the patch mask and its complement.
    Returns relative RMSE degradation for each region, the area fraction,
    and ``outside_ratio = rel_outside / (100 * area_fraction)``.
    """
    images = victim.check_input(eval_set.images)
    patched, masks, _ = apply_patch_batch(images, artifact, seed)
    clean = predict_depth(victim, images)
    adv = predict_depth(victim, patched)
    sums = np.zeros((2, 2))  # [clean, adv] x [inside, outside]
    counts = np.zeros(2)
    change_out = []
    for i in range(len(images)):
        g = eval_set.depths[i].astype(np.float64)
        valid = eval_set.valid_masks[i]
        for row, pred in enumerate((clean[i], adv[i])):
            p = pred.astype(np.float64)
            if median_scaling:
                p = p * (np.median(g[valid]) / np.median(p[valid]))
            sq = (np.clip(p, victim.d_min, victim.d_max) - g) ** 2
            sums[row, 0] += sq[valid & masks[i]].sum()
            sums[row, 1] += sq[valid & ~masks[i]].sum()
        counts += [(valid & masks[i]).sum(), (valid & ~masks[i]).sum()]
        change_out.append(np.abs(adv[i] - clean[i])[~masks[i]].mean())
    r = np.sqrt(sums / counts)
    area = artifact.side ** 2 / float(images.shape[1] * images.shape[2])
    rel_out = rel_degradation(r[0, 1], r[1, 1])
    return {
        "area_fraction": area,
        "rel_inside": rel_degradation(r[0, 0], r[1, 0]),
        "rel_outside": rel_out,
        "mean_abs_change_outside": float(np.mean(change_out)),
        "outside_ratio": rel_out / (100.0 * area),
    }


@dataclass
class TransferMatrix:
    """Rows are evaluated victims, columns the model each artifact was optimized on."""

    victims: list
    sources: list
    cells: dict  # (victim, source, attack_type) -> MetricReport or None for a gap

    def cell(self, victim, source, attack_type):
        return self.cells.get((victim, source, attack_type))

    def off_diagonal(self):
        return {k: v for k, v in self.cells.items() if k[0] != k[1]}

    def rows(self):
        out = []
        for (victim, source, attack_type), rep in self.cells.items():
            if rep is None:
                out.append([victim, source, attack_type] + [""] * 8)
            else:
                out.append(rep.csv_row())
        return out

    def to_csv(self):
        buf = io.StringIO()
        write_csv(buf, self.rows())
        return buf.getvalue()

    def to_jsonl(self):
        return "".join(rep.to_json() + "\n" for rep in self.cells.values() if rep is not None)


def write_csv(stream, rows):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)


def reports_to_csv(reports):
    buf = io.StringIO()
    write_csv(buf, [r.csv_row() for r in reports])
    return buf.getvalue()


def transfer_matrix(victims, artifacts, eval_set, seed=0, median_scaling=True):
    """Evaluate every artifact on every victim.

    ``artifacts`` is a list of artifacts (their provenance names the source
    victim) or a dict ``{source_model_id: artifact or [artifacts]}``. Cells
    where the source equals the victim are white-box results. A victim with
    no artifacts of some attack type yields gap cells for that source.
    """
    victims = list(victims)
    if not victims:
        raise ValueError("need at least one victim")
    if isinstance(artifacts, dict):
        by_source = {k: (v if isinstance(v, (list, tuple)) else [v]) for k, v in artifacts.items()}
    else:
        by_source = {}
        for art in artifacts:
            by_source.setdefault(art.provenance.get("victim"), []).append(art)
    ids = [v.model_id for v in victims]
    sources = ids + [s for s in by_source if s not in ids]
    kinds = sorted({_kind(a) for arts in by_source.values() for a in arts})
    cells = {}
    for victim in victims:
        for source in sources:
            arts = by_source.get(source, [])
            for kind in kinds:
                matching = [a for a in arts if _kind(a) == kind]
                if not matching:
                    cells[(victim.model_id, source, kind)] = None
                for art in matching:
                    rep = evaluate_attack(victim, art, eval_set, seed, median_scaling)
                    rep.source_model = source
                    rep.provenance["box"] = "white" if source == victim.model_id else "black"
                    cells[(victim.model_id, source, kind)] = rep
    return TransferMatrix(ids, sources, cells)


def _kind(artifact):
    return "patch" if isinstance(artifact, PatchArtifact) else "perturbation"
