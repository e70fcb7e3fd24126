import copy
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dfadepth.dfa import dfa_gradient_check, dfa_loss
from dfadepth.errors import ShapeError
from dfadepth.types import TapSpec


def two_pass_variance(values):
    n = len(values)
    mean = sum(values) / n
    return sum((v - mean) ** 2 for v in values) / n


def brute_force_dfa(clean, attacked, weights):
    total = 0.0
    for lid, w in weights.items():
        prod = [a * c for a, c in zip(attacked[lid].ravel().tolist(), clean[lid].ravel().tolist())]
        total += w * math.log(1.0 + two_pass_variance(prod))
    return total


def random_bundle(rng, shapes):
    return {lid: rng.normal(0, rng.uniform(0.1, 3), size=s) for lid, s in shapes.items()}


def test_zero_attacked_layer_contributes_nothing():
    clean = {"a": np.ones((2, 3, 3))}
    attacked = {"a": np.zeros((2, 3, 3))}
    value = dfa_loss(clean, attacked)
    assert value.total == 0.0
    assert value.per_layer == [("a", 0.0, 0.0)]


def test_hand_example():
    value = dfa_loss({"l": np.array([[[1.0, 1.0]]])}, {"l": np.array([[[0.0, 2.0]]])})
    assert value.per_layer[0][1] == pytest.approx(1.0)
    assert value.total == pytest.approx(math.log(2.0), abs=1e-12)


def test_duplicated_layer_doubles_total():
    rng = np.random.default_rng(0)
    c = {"x": rng.normal(size=(3, 4, 4))}
    a = {"x": rng.normal(size=(3, 4, 4))}
    single = dfa_loss(c, a).total
    doubled = dfa_loss({"x": c["x"], "y": c["x"]}, {"x": a["x"], "y": a["x"]}).total
    assert doubled == pytest.approx(2 * single, rel=1e-12)


def test_matches_two_pass_oracle_on_small_bundles():
    rng = np.random.default_rng(3)
    for _ in range(100):
        shapes = {f"l{i}": tuple(rng.integers(1, 5, size=3)) for i in range(rng.integers(1, 4))}
        shapes = {k: s for k, s in shapes.items() if np.prod(s) <= 100}
        if not shapes:
            continue
        clean, attacked = random_bundle(rng, shapes), random_bundle(rng, shapes)
        weights = {k: float(rng.uniform(0, 2)) for k in shapes}
        got = dfa_loss(clean, attacked, weights).total
        assert got == pytest.approx(brute_force_dfa(clean, attacked, weights), rel=1e-6, abs=1e-12)


def test_nonnegative_and_zero_iff_constant_product():
    rng = np.random.default_rng(4)
    for trial in range(1000):
        shape = (2, 3, 3)
        clean = rng.uniform(0.5, 2.0, size=shape)
        if trial % 2:
            attacked = rng.normal(size=shape)
            value = dfa_loss({"l": clean}, {"l": attacked}).total
            assert value > 0
        else:
            const = rng.normal()
            attacked = const / clean  # elementwise product is constant
            value = dfa_loss({"l": clean}, {"l": attacked}).total
            assert value >= 0
            assert value == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetric_in_clean_and_attacked(seed):
    rng = np.random.default_rng(seed)
    shapes = {"a": (2, 3, 4), "b": (1, 5, 5)}
    c, a = random_bundle(rng, shapes), random_bundle(rng, shapes)
    assert dfa_loss(c, a).total == pytest.approx(dfa_loss(a, c).total, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 5.0))
def test_raising_a_weight_never_lowers_total(seed, bump):
    rng = np.random.default_rng(seed)
    shapes = {"a": (2, 3, 4), "b": (1, 5, 5)}
    c, a = random_bundle(rng, shapes), random_bundle(rng, shapes)
    lo = dfa_loss(c, a, {"a": 1.0, "b": 1.0}).total
    hi = dfa_loss(c, a, {"a": 1.0 + bump, "b": 1.0}).total
    assert hi >= lo


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        dfa_loss({"a": np.ones((1, 2, 2))}, {"a": np.ones((1, 3, 2))})
    with pytest.raises(ShapeError):
        dfa_loss({"a": np.ones((1, 2, 2))}, {"b": np.ones((1, 2, 2))})


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        dfa_loss({"a": np.ones((1, 2, 2))}, {"a": np.ones((1, 2, 2))}, {"a": -1.0})
    with pytest.raises(ValueError):
        TapSpec(("a",), (-0.5,))


def test_per_layer_breakdown_json():
    import json

    v = dfa_loss({"l": np.array([[[1.0, 1.0]]])}, {"l": np.array([[[0.0, 2.0]]])})
    parsed = json.loads(v.to_json())
    assert parsed["per_layer"][0]["layer_id"] == "l"
    assert parsed["total"] == pytest.approx(math.log(2))


def test_gradient_check_healthy_model(fresh_model, scene):
    assert dfa_gradient_check(fresh_model, scene, epsilon=1e-4) <= 1e-3


@pytest.mark.parametrize("eps", [1e-7, 0.1])
def test_gradient_check_epsilon_range(fresh_model, scene, eps):
    with pytest.raises(ValueError):
        dfa_gradient_check(fresh_model, scene, epsilon=eps)


def test_gradient_check_constant_model(fresh_model, scene):
    model = copy.deepcopy(fresh_model)
    with torch.no_grad():
        for p in model.net.parameters():
            p.zero_()
    assert dfa_gradient_check(model, scene, epsilon=1e-4) == 0.0
