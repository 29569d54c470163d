import numpy as np
import pytest

from multiflow.budgeting import (
    budgets_global_magnitude,
    budgets_global_score,
    budgets_multimodal,
    budgets_uniform,
    check_conservation,
    largest_remainder,
    make_budgets,
    modality_keep_counts,
)
from multiflow.errors import ValidationError
from multiflow.masking import build_mask
from multiflow.modelspec import load_model_spec
from multiflow.pipeline import make_mask
from multiflow.scoring import ScoreMatrix, score_magnitude
from multiflow.tensorstore import TensorMap

from conftest import make_checkpoint


def model_from(shapes, modalities):
    """shapes: {name: (out, in)}; modalities: {name: modality}"""
    ckpt = make_checkpoint(shapes, seed=11)
    config = {
        "modalities": sorted(set(modalities.values()), key=list(modalities.values()).index),
        "layers": [{"name": n, "modality": modalities[n]} for n in shapes],
    }
    return load_model_spec(config, ckpt), ckpt


def weights_of(ckpt):
    return {name: arr for name, arr in ckpt.items()}


class TestApportionment:
    def test_exact_proportional(self):
        model, _ = model_from(
            {"v": (10, 10), "t": (10, 10)}, {"v": "vision", "t": "text"}
        )
        counts = modality_keep_counts(model, 0.37)
        assert counts == {"vision": 37, "text": 37}
        assert sum(counts.values()) == round(0.37 * 200)

    def test_hand_remainder_case(self):
        # sizes 10 and 5 at rho=0.5: total 8, quotas floor to {5,2}, text gets the leftover
        model, _ = model_from({"v": (2, 5), "t": (1, 5)}, {"v": "vision", "t": "text"})
        counts = modality_keep_counts(model, 0.5)
        assert counts == {"vision": 5, "text": 3}

    def test_rho_one_keeps_all(self):
        model, _ = model_from({"v": (3, 4), "t": (2, 6)}, {"v": "a", "t": "b"})
        assert modality_keep_counts(model, 1.0) == {"a": 12, "b": 12}

    def test_largest_remainder_conserves(self):
        assert sum(largest_remainder([7, 11, 3], 13)) == 13
        assert largest_remainder([4, 4], 4) == [2, 2]
        assert largest_remainder([1, 1, 1], 0) == [0, 0, 0]


class TestMultimodalBudgets:
    def test_hand_pool_with_ties(self):
        ckpt = TensorMap()
        ckpt.put("A", np.array([[5.0, 4.0, 1.0, 1.0]], dtype=np.float32))
        ckpt.put("B", np.array([[3.0, 2.0, 2.0, 1.0]], dtype=np.float32))
        config = {
            "modalities": ["m"],
            "layers": [{"name": "A", "modality": "m"}, {"name": "B", "modality": "m"}],
        }
        model = load_model_spec(config, ckpt)
        plan = budgets_multimodal(model, weights_of(ckpt), 0.5)
        assert plan.per_layer == {"A": 2, "B": 2}

    def test_rho_zero(self, two_modality_setup):
        model, ckpt = two_modality_setup
        plan = budgets_multimodal(model, weights_of(ckpt), 0.0)
        assert all(k == 0 for k in plan.per_layer.values())

    def test_symmetric_modalities(self):
        ckpt = TensorMap()
        W = np.array([[3.0, 1.0], [2.0, 5.0]], dtype=np.float32)
        ckpt.put("v", W)
        ckpt.put("t", W.copy())
        config = {
            "modalities": ["vision", "text"],
            "layers": [{"name": "v", "modality": "vision"}, {"name": "t", "modality": "text"}],
        }
        model = load_model_spec(config, ckpt)
        plan = budgets_multimodal(model, weights_of(ckpt), 0.5)
        assert plan.per_layer["v"] == plan.per_layer["t"]
        assert plan.per_modality["vision"] == plan.per_modality["text"]

    def test_modality_balance_within_one_param(self, two_modality_setup):
        model, ckpt = two_modality_setup
        from multiflow.modelspec import partition_by_modality

        sizes = {
            m: sum(l.size for l in members)
            for m, members in partition_by_modality(model).items()
        }
        for sigma in (0.63, 0.75, 0.90):
            rho = 1 - sigma
            plan = budgets_multimodal(model, weights_of(ckpt), rho)
            check_conservation(plan, model)
            for m, k in plan.per_modality.items():
                realized = 1 - k / sizes[m]
                assert abs(realized - sigma) * sizes[m] < 1.0 + 1e-9


class TestGlobalBudgets:
    def test_layer_collapse_illustration(self):
        ckpt = TensorMap()
        ckpt.put("big", np.array([[10.0]], dtype=np.float32))
        ckpt.put("small", np.array([[1.0, 1.0, 1.0]], dtype=np.float32))
        config = {
            "modalities": ["m"],
            "layers": [{"name": "big", "modality": "m"}, {"name": "small", "modality": "m"}],
        }
        model = load_model_spec(config, ckpt)
        plan = budgets_global_magnitude(model, weights_of(ckpt), 0.25)
        assert plan.per_layer == {"big": 1, "small": 0}

    def test_single_modality_equals_multimodal(self):
        shapes = {f"l{i}": (3, 4) for i in range(4)}
        model, ckpt = model_from(shapes, {n: "m" for n in shapes})
        w = weights_of(ckpt)
        for rho in (0.1, 0.4, 0.9):
            a = budgets_global_magnitude(model, w, rho)
            b = budgets_multimodal(model, w, rho)
            assert a.per_layer == b.per_layer

    def test_rho_one_dense(self, two_modality_setup):
        model, ckpt = two_modality_setup
        plan = budgets_global_magnitude(model, weights_of(ckpt), 1.0)
        assert all(plan.per_layer[l.name] == l.size for l in model.layers)

    def test_global_score_hand_case(self):
        model, ckpt = model_from({"A": (1, 2), "B": (1, 2)}, {"A": "m", "B": "m"})
        scores = {
            "A": ScoreMatrix("A", "magnitude", np.array([[9.0, 8.0]], dtype=np.float32)),
            "B": ScoreMatrix("B", "magnitude", np.array([[1.0, 1.0]], dtype=np.float32)),
        }
        plan = budgets_global_score(model, scores, 0.5)
        assert plan.per_layer == {"A": 2, "B": 0}

    def test_global_score_uniform_tie_break(self):
        model, ckpt = model_from({"A": (1, 2), "B": (1, 2)}, {"A": "m", "B": "m"})
        scores = {
            n: ScoreMatrix(n, "magnitude", np.ones((1, 2), dtype=np.float32)) for n in ("A", "B")
        }
        plan = budgets_global_score(model, scores, 0.5)
        # layer order wins all-equal ties
        assert plan.per_layer == {"A": 2, "B": 0}

    def test_criterion_mismatch_rejected(self):
        model, ckpt = model_from({"A": (1, 2), "B": (1, 2)}, {"A": "m", "B": "m"})
        scores = {
            "A": ScoreMatrix("A", "magnitude", np.ones((1, 2), dtype=np.float32)),
            "B": ScoreMatrix("B", "lamp", np.ones((1, 2), dtype=np.float32)),
        }
        with pytest.raises(ValidationError, match="mixed criteria"):
            budgets_global_score(model, scores, 0.5)


class TestUniformBudgets:
    def test_equal_sizes(self):
        model, _ = model_from({"a": (2, 3), "b": (3, 2)}, {"a": "m", "b": "m"})
        plan = budgets_uniform(model, 0.5)
        assert plan.per_layer == {"a": 3, "b": 3}

    def test_exact_proportion(self):
        model, _ = model_from({"a": (3, 4), "b": (2, 2)}, {"a": "m", "b": "m"})
        plan = budgets_uniform(model, 0.5)
        assert plan.per_layer == {"a": 6, "b": 2}

    def test_rho_zero(self):
        model, _ = model_from({"a": (3, 4)}, {"a": "m"})
        assert budgets_uniform(model, 0.0).per_layer == {"a": 0}


class TestConservationAndMonotonicity:
    @pytest.mark.parametrize("sigma", [0.63, 0.75, 0.90])
    def test_conservation_all_policies(self, two_modality_setup, sigma):
        model, ckpt = two_modality_setup
        rho = 1 - sigma
        w = weights_of(ckpt)
        scores = {n: score_magnitude(n, W) for n, W in w.items()}
        for plan in (
            budgets_multimodal(model, w, rho),
            budgets_global_magnitude(model, w, rho),
            budgets_global_score(model, scores, rho),
            budgets_uniform(model, rho),
        ):
            check_conservation(plan, model)
            expected = round(rho * model.global_param_count)
            assert sum(plan.per_layer.values()) == expected

    def test_monotone_in_rho(self, two_modality_setup):
        model, ckpt = two_modality_setup
        w = weights_of(ckpt)
        rhos = [i / 20 for i in range(21)]
        for builder in (budgets_multimodal, budgets_global_magnitude):
            prev = None
            for rho in rhos:
                plan = builder(model, w, rho)
                if prev is not None:
                    for layer, k in plan.per_layer.items():
                        assert k >= prev[layer]
                prev = plan.per_layer

    def test_weight_scale_never_decreases_budget(self, two_modality_setup):
        model, ckpt = two_modality_setup
        w = weights_of(ckpt)
        base = budgets_global_magnitude(model, w, 0.5).per_layer
        boosted = dict(w)
        boosted["vis.a"] = (w["vis.a"] * 3.0).astype(np.float32)
        after = budgets_global_magnitude(model, boosted, 0.5).per_layer
        assert after["vis.a"] >= base["vis.a"]


class TestTiedBudgets:
    def test_tied_copies_counted_once_and_mirrored(self):
        ckpt = TensorMap()
        W = np.array([[4.0, 3.0], [2.0, 1.0]], dtype=np.float32)
        ckpt.put("enc.q", W)
        ckpt.put("dec.q", W.copy())
        ckpt.put("other", np.array([[5.0, 0.5], [0.25, 0.125]], dtype=np.float32))
        config = {
            "modalities": ["m"],
            "layers": [
                {"name": "enc.q", "modality": "m", "tie_group": "q"},
                {"name": "dec.q", "modality": "m", "tie_group": "q"},
                {"name": "other", "modality": "m"},
            ],
        }
        model = load_model_spec(config, ckpt)
        plan = budgets_global_magnitude(model, weights_of(ckpt), 0.5)
        # dedup pool has 8 params, keep 4: values 5,4,3,2 -> enc.q gets 3, other gets 1
        assert plan.per_layer["enc.q"] == 3
        assert plan.per_layer["dec.q"] == 3
        assert plan.per_layer["other"] == 1
        check_conservation(plan, model)


class TestOmpEquivalence:
    def test_composition_reproduces_global_magnitude_masks(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            n_layers = rng.integers(3, 9)
            shapes = {
                f"l{i}": (int(rng.integers(2, 7)), int(rng.integers(2, 7)))
                for i in range(n_layers)
            }
            ckpt = TensorMap()
            total = sum(o * i for o, i in shapes.values())
            # distinct magnitudes so tie-breaking cannot mask differences
            magnitudes = rng.permutation(np.arange(1, total + 1)).astype(np.float32)
            signs = rng.choice([-1.0, 1.0], size=total).astype(np.float32)
            flat = magnitudes * signs
            lo = 0
            for name, (o, i) in shapes.items():
                ckpt.put(name, flat[lo : lo + o * i].reshape(o, i))
                lo += o * i
            config = {
                "modalities": ["only"],
                "layers": [{"name": n, "modality": "only"} for n in shapes],
            }
            model = load_model_spec(config, ckpt)
            sigma = float(rng.uniform(0.2, 0.95))
            mm_mask, _ = make_mask(model, weights_of(ckpt), "magnitude", "multimodal_magnitude", sigma)
            gm_mask, _ = make_mask(model, weights_of(ckpt), "magnitude", "global_magnitude", sigma)
            for name in shapes:
                np.testing.assert_array_equal(mm_mask.masks[name], gm_mask.masks[name])


def test_make_budgets_dispatch(two_modality_setup):
    model, ckpt = two_modality_setup
    w = weights_of(ckpt)
    assert make_budgets("uniform", model, 0.5).policy == "uniform"
    with pytest.raises(ValidationError, match="unknown budget policy"):
        make_budgets("magic", model, 0.5)
    with pytest.raises(ValidationError, match="need checkpoint weights"):
        make_budgets("global_magnitude", model, 0.5)
