import csv
import io
import json

import numpy as np
import pytest

from dfadepth.evaluation import (CSV_COLUMNS, MetricReport, TransferMatrix, cross_data_eval,
                                 evaluate_attack, evaluate_fgsm, patch_damage_split,
                                 reports_to_csv, transfer_matrix)
from dfadepth.model import build_model
from dfadepth.patch import PatchArtifact
from dfadepth.perturbation import PerturbationArtifact


def _pert(source, eta=0.05, seed=0):
    alpha = np.random.default_rng(seed).uniform(-1, 1, (96, 128, 3)).astype(np.float32)
    return PerturbationArtifact(alpha, eta, {"victim": source, "mode": "global"})


def _patch(source, side=12, seed=0):
    beta = np.random.default_rng(seed).random((side, side, 3)).astype(np.float32)
    return PatchArtifact(beta, side * side / (96 * 128), {"victim": source})


@pytest.fixture(scope="module")
def victims():
    return [build_model(seed=17), build_model(seed=18)]


def test_zero_perturbation_has_zero_degradation(fresh_model, tiny_set):
    art = PerturbationArtifact(np.zeros((96, 128, 3), np.float32), 0.0, {"victim": "x"})
    rep = evaluate_attack(fresh_model, art, tiny_set)
    assert rep.rmse_clean == rep.rmse_attacked
    assert rep.rel_degradation == 0 and rep.rel_degradation_pct == 0
    assert rep.n_images == len(tiny_set)


def test_report_fields_and_csv(fresh_model, tiny_set):
    rep = evaluate_attack(fresh_model, _pert("src"), tiny_set, seed=4)
    assert rep.victim == fresh_model.model_id and rep.source_model == "src"
    assert rep.attack_type == "perturbation" and rep.seed == 4
    row = rep.csv_row()
    assert len(row) == len(CSV_COLUMNS)
    parsed = list(csv.reader(io.StringIO(reports_to_csv([rep]))))
    assert tuple(parsed[0]) == CSV_COLUMNS and parsed[1] == row
    js = json.loads(rep.to_json())
    assert js["rel_degradation_pct"] == rep.rel_degradation_pct


def test_evaluation_is_deterministic(fresh_model, tiny_set):
    a = evaluate_attack(fresh_model, _patch("src"), tiny_set, seed=2)
    b = evaluate_attack(fresh_model, _patch("src"), tiny_set, seed=2)
    assert a.csv_row() == b.csv_row()


def test_empty_eval_set(fresh_model, tiny_set):
    with pytest.raises(ValueError):
        evaluate_attack(fresh_model, _pert("s"), tiny_set.subset([]))


def test_artifact_shape_mismatch(fresh_model, tiny_set):
    from dfadepth.errors import ShapeError

    art = PerturbationArtifact(np.zeros((32, 32, 3), np.float32), 0.05)
    with pytest.raises(ShapeError):
        evaluate_attack(fresh_model, art, tiny_set)


def test_unknown_artifact_type(fresh_model, tiny_set):
    with pytest.raises(TypeError):
        evaluate_attack(fresh_model, object(), tiny_set)


def test_fgsm_report(fresh_model, tiny_set):
    rep = evaluate_fgsm(fresh_model, 0.0, tiny_set)
    assert rep.attack_type == "fgsm" and rep.rel_degradation == 0


def test_cross_data_tag(fresh_model):
    from dfadepth.data import generate_scenes

    rep = cross_data_eval(fresh_model, _pert("s"), generate_scenes("B", 3, seed=1))
    assert rep.provenance["tag"] == "cross-data"
    assert rep.provenance["distribution"] == "B"


def test_patch_damage_split_keys(fresh_model, tiny_set):
    out = patch_damage_split(fresh_model, _patch("s", 8), tiny_set)
    assert out["area_fraction"] == pytest.approx(64 / 12288)
    assert out["outside_ratio"] == pytest.approx(out["rel_outside"] / (100 * out["area_fraction"]))
    assert out["mean_abs_change_outside"] >= 0


def test_transfer_matrix_grid(victims, tiny_set):
    ids = [v.model_id for v in victims]
    arts = [_pert(ids[0]), _patch(ids[0]), _pert(ids[1], seed=1)]
    tm = transfer_matrix(victims, arts, tiny_set.subset([0, 1]))
    assert isinstance(tm, TransferMatrix)
    assert set(tm.cells) == {(v, s, k) for v in ids for s in ids for k in ("patch", "perturbation")}
    assert tm.cell(ids[0], ids[1], "patch") is None  # gap, no patch from source 1
    white = tm.cell(ids[0], ids[0], "perturbation")
    black = tm.cell(ids[1], ids[0], "perturbation")
    assert white.provenance["box"] == "white" and black.provenance["box"] == "black"
    assert black.source_model == ids[0]
    rows = list(csv.reader(io.StringIO(tm.to_csv())))
    assert len(rows) == 1 + len(tm.cells)
    assert len(tm.to_jsonl().splitlines()) == sum(r is not None for r in tm.cells.values())
    assert all(k[0] != k[1] for k in tm.off_diagonal())


def test_transfer_matrix_dict_input(victims, tiny_set):
    ids = [v.model_id for v in victims]
    tm = transfer_matrix(victims[:1], {ids[1]: _pert("other")}, tiny_set.subset([0]))
    assert tm.sources == [ids[0], ids[1]]
    assert tm.cell(ids[0], ids[0], "perturbation") is None
    assert tm.cell(ids[0], ids[1], "perturbation").provenance["box"] == "black"


def test_transfer_matrix_needs_victims(tiny_set):
    with pytest.raises(ValueError):
        transfer_matrix([], [], tiny_set)


def test_metric_report_rounding():
    rep = MetricReport("v", "s", "patch", 12, 1.0, 1.995, 0.1, 0.2, 99.5, 1, 0)
    assert rep.rel_degradation_pct == 100
    assert rep.csv_row()[3] == "12"
