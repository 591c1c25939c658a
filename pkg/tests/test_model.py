from dataclasses import replace

import numpy as np
import pytest

from errmap.core.autodiff import Graph, ShapeMismatchError, Tensor, backward, grad_check
from errmap.core.losses import LossWeights, compute_losses
from errmap.core.model import (
    AepNetConfig,
    AepNetModel,
    attention_fuse,
    budget_deviation,
    plain_budget_base,
    predict_volume,
)
from errmap.data.volumes import derive_targets, one_hot


def random_inputs(rng, config, dims):
    labels = rng.integers(0, config.num_classes, size=dims)
    image = Tensor(rng.random((1,) + tuple(dims)))
    mask = Tensor(one_hot(labels, config.num_classes))
    return image, mask, labels


@pytest.mark.unit
class TestAepNetConfig:
    def test_defaults(self):
        config = AepNetConfig()
        assert config.channels == [8, 16, 32]
        assert config.ceu_channels == 16
        assert config.has_ceu

    def test_validation(self):
        with pytest.raises(ValueError):
            AepNetConfig(variant="bogus").validate()
        with pytest.raises(ValueError):
            AepNetConfig(base_channels=6, gn_groups=4).validate()
        with pytest.raises(ValueError):
            AepNetConfig(crop_dims=(12, 16, 16)).validate()

    def test_dict_round_trip_rejects_unknown_keys(self):
        config = AepNetConfig(variant="no_ceu")
        assert AepNetConfig.from_dict(config.to_dict()) == config
        with pytest.raises(ValueError):
            AepNetConfig.from_dict({"width": 3})


@pytest.mark.unit
class TestParameterCounts:
    def test_full_network(self):
        assert AepNetModel.build(AepNetConfig(), seed=0).parameter_count() == 229372

    def test_no_ceu_drops_only_the_ceu(self):
        full = AepNetModel.build(AepNetConfig(), seed=0)
        no_ceu = AepNetModel.build(AepNetConfig(variant="no_ceu"), seed=0)
        ceu = sum(p.size for name, p in full.params.items() if name.startswith("ceu."))
        assert ceu == 21409
        assert no_ceu.parameter_count() == 229372 - 21409
        assert not any(name.startswith("ceu.") for name in no_ceu.params)

    def test_plain_variant_matches_budget(self):
        config = AepNetConfig()
        base, groups = plain_budget_base(config)
        assert (base, groups) == (13, 1)
        plain = replace(config, variant="plain_concat_unet", plain_base_channels=base, plain_gn_groups=groups)
        assert AepNetModel.build(plain, seed=0).parameter_count() == 226020
        assert budget_deviation(plain) <= 0.10

    def test_parameter_names(self):
        names = set(AepNetModel.build(AepNetConfig(), seed=0).params)
        for expected in (
            "cbft.enc0.conv0.weight",
            "cbft.dec1.up.weight",
            "cbft.head.weight",
            "mep.enc2.gn1.gamma",
            "mep.dec0.attn.weight",
            "mep.head.bias",
            "ceu.fc1.weight",
        ):
            assert expected in names


@pytest.mark.unit
class TestBuild:
    def test_same_seed_same_weights(self, tiny_model_config):
        a = AepNetModel.build(tiny_model_config, seed=5).state_dict()
        b = AepNetModel.build(tiny_model_config, seed=5).state_dict()
        c = AepNetModel.build(tiny_model_config, seed=6).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["mep.head.weight"], c["mep.head.weight"])

    def test_init_ranges(self, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        weight = model["cbft.enc0.conv0.weight"].data
        limit = np.sqrt(6.0 / (1 * 27 + 4 * 27))
        assert np.all(np.abs(weight) <= limit)
        assert np.all(model["cbft.enc0.conv0.bias"].data == 0)
        assert np.all(model["cbft.enc0.gn0.gamma"].data == 1)

    def test_load_state_dict_validates(self, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        state = model.state_dict()
        state.pop("mep.head.bias")
        with pytest.raises(ValueError):
            model.load_state_dict(state)


@pytest.mark.unit
class TestForward:
    def test_output_shapes_and_ranges(self, rng, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        image, mask, _ = random_inputs(rng, tiny_model_config, (8, 8, 8))
        out = model.forward(image, mask)
        assert out.error_prob.shape == (2, 8, 8, 8)
        np.testing.assert_allclose(out.error_prob.data.sum(axis=0), 1.0, atol=1e-12)
        assert out.boundary_pred.shape == (1, 8, 8, 8)
        assert np.all((out.boundary_pred.data > 0) & (out.boundary_pred.data < 1))
        assert out.cer.shape == ()
        assert 0.0 < out.cer.item() < 1.0

    def test_variants(self, rng, tiny_model_config):
        image, mask, _ = random_inputs(rng, tiny_model_config, (8, 8, 8))
        no_ceu = AepNetModel.build(replace(tiny_model_config, variant="no_ceu"), seed=0).forward(image, mask)
        assert no_ceu.cer is None and no_ceu.boundary_pred is not None
        plain = AepNetModel.build(replace(tiny_model_config, variant="plain_concat_unet"), seed=0).forward(image, mask)
        assert plain.cer is None and plain.boundary_pred is None
        assert plain.error_prob.shape == (2, 8, 8, 8)

    def test_input_validation(self, rng, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        image, mask, _ = random_inputs(rng, tiny_model_config, (8, 8, 8))
        with pytest.raises(ShapeMismatchError):
            model.forward(image, Tensor(mask.data[:2]))
        odd_image, odd_mask, _ = random_inputs(rng, tiny_model_config, (6, 8, 8))
        with pytest.raises(ShapeMismatchError):
            model.forward(odd_image, odd_mask)

    def test_every_parameter_receives_a_gradient(self, rng, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        image, mask, labels = random_inputs(rng, tiny_model_config, (8, 8, 8))
        gt = rng.integers(0, tiny_model_config.num_classes, size=(8, 8, 8))
        error_map, boundary = derive_targets(labels, gt, tiny_model_config.num_classes)
        with Graph() as graph:
            losses = compute_losses(model.forward(image, mask), error_map, boundary, LossWeights())
        grads = backward(graph, losses.total)
        named = {p.name for p in grads}
        assert named == set(model.params)
        assert not grads.unreached

    def test_gradients_match_finite_differences_smoke(self, rng, tiny_model_config):
        config = replace(tiny_model_config, crop_dims=(4, 4, 4))
        model = AepNetModel.build(config, seed=1)
        image, mask, labels = random_inputs(rng, config, (4, 4, 4))
        gt = rng.integers(0, config.num_classes, size=(4, 4, 4))
        error_map, boundary = derive_targets(labels, gt, config.num_classes)

        def loss():
            return compute_losses(model.forward(image, mask), error_map, boundary, LossWeights()).total

        checked = [
            model[name]
            for name in (
                "mep.head.weight",
                "mep.dec0.attn.weight",
                "cbft.head.bias",
                "cbft.enc1.conv1.weight",
                "ceu.fc1.weight",
                "ceu.gn0.gamma",
            )
        ]
        report = grad_check(loss, checked, samples_per_param=2, tolerance=1e-2)
        assert report.passed, report


@pytest.mark.unit
class TestAttentionFuse:
    def test_zero_gate_weights_scale_by_one_and_a_half(self, rng):
        f_mep = Tensor(rng.normal(size=(3, 2, 2, 2)))
        f_cbft = Tensor(rng.normal(size=(4, 2, 2, 2)))
        out = attention_fuse(f_mep, f_cbft, Tensor(np.zeros((3, 4, 1, 1, 1))), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 1.5 * f_mep.data)

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            attention_fuse(
                Tensor(np.zeros((1, 2, 2, 2))),
                Tensor(np.zeros((1, 4, 2, 2))),
                Tensor(np.zeros((1, 1, 1, 1, 1))),
                Tensor(np.zeros(1)),
            )


@pytest.mark.unit
class TestPredictVolume:
    def test_crops_back_to_original_extents(self, rng, tiny_model_config):
        model = AepNetModel.build(tiny_model_config, seed=0)
        labels = rng.integers(0, tiny_model_config.num_classes, size=(10, 8, 6))
        out = predict_volume(model, rng.random((10, 8, 6)), one_hot(labels, tiny_model_config.num_classes))
        assert out.error_prob.shape == (2, 10, 8, 6)
        assert out.boundary_pred.shape == (1, 10, 8, 6)
        assert 0.0 < out.cer.item() < 1.0
        assert out.error_prob.node_id is None


@pytest.mark.integration
class TestDeskGradients:
    def test_every_parameter_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        config = replace(AepNetConfig(), crop_dims=(8, 8, 8))
        model = AepNetModel.build(config, seed=0)
        image, mask, labels = random_inputs(rng, config, (8, 8, 8))
        gt = rng.integers(0, config.num_classes, size=(8, 8, 8))
        error_map, boundary = derive_targets(labels, gt, config.num_classes)

        def loss():
            return compute_losses(model.forward(image, mask), error_map, boundary, LossWeights()).total

        # an entry whose 1e-5 interval straddles a ReLU or max-pool kink is re-measured at shorter steps
        report = grad_check(
            loss, model.parameters(), step=1e-5, tolerance=1e-4, samples_per_param=1, retry_steps=(1e-6, 1e-7)
        )
        assert report.checked_entries == len(model.params)
        assert report.passed, report
