from fractions import Fraction

import numpy as np
import pytest

from dwcaps_engine.analysis import compare_dw_vs_sc, count_parameters, kernel_sweep, sweep_frame, twin_reduction
from dwcaps_engine.core.autograd.gradcheck import finite_difference_check
from dwcaps_engine.core.autograd.tensor import Tensor, make_rng
from dwcaps_engine.core.capsules.routing import CapsuleConfig, margin_loss
from dwcaps_engine.core.config.naming import all_variants, parse_sweep_base, parse_variant
from dwcaps_engine.core.kernels.cost import cost_ratio_exact
from dwcaps_engine.core.utils.errors import BuildError, ContractError, UsageError
from dwcaps_engine.make_model import BuildOptions, build_twins, build_variant, is_twin_pair


def test_variant_names_round_trip():
    v = parse_variant("64-v2-2-2-k7")
    assert (v.input_size, v.conv_type, v.num_convs, v.pool_flag, v.kernel_size) == (64, "v2", 2, 2, 7)
    assert str(v) == "64-v2-2-2-k7"
    assert v.base_name == "64-v2-2-2"
    assert v.second_conv_mode == "standard"
    assert v.is_max and not v.is_mini
    assert parse_variant("32-v1-2-2-k3").is_mini
    assert v.twin().name == "64-v1-2-2-k7"
    assert v.with_kernel(3).name == "64-v2-2-2-k3"


@pytest.mark.parametrize("name", ["32-v3-2-2-k3", "48-v1-2-2-k3", "32-v1-1-2-k3", "32-v1-2-2-k4", "", "32-v1-2-2"])
def test_invalid_variant_names(name):
    with pytest.raises(UsageError):
        parse_variant(name)


def test_sweep_base_order():
    assert [v.kernel_size for v in parse_sweep_base("32-v1-2-2")] == [9, 7, 5, 3]
    with pytest.raises(UsageError):
        parse_sweep_base("32-v1-2-2-k3")


def test_every_variant_is_listed_once():
    names = [v.name for v in all_variants()]
    assert len(names) == 32
    assert len(set(names)) == 32


@pytest.mark.parametrize("variant", all_variants(), ids=str)
def test_every_variant_builds_and_runs(variant, narrow_options, small_caps):
    model = build_variant(variant, small_caps, narrow_options)
    assert model.output_shape == (3, 4)
    extent = variant.input_size // 2 if variant.pool_flag == 2 else variant.input_size
    grid = model.shapes[-2][0][0]
    assert grid == (extent // 2 if extent > narrow_options.capsule_grid else extent)
    v = model.forward(Tensor(make_rng(0).uniform(size=(1, *model.input_shape))))
    assert v.shape == (1, 3, 4)
    assert count_parameters(model).total_params == model.parameter_count()


@pytest.mark.parametrize("name,grid,stepped", [
    ("32-v1-2-2-k3", 16, False),
    ("32-v2-2-1-k3", 16, True),
    ("64-v1-2-2-k3", 16, True),
    ("64-v2-1-1-k3", 32, True),
])
def test_at_most_one_stride_step_before_the_capsules(name, grid, stepped, narrow_options, small_caps):
    model = build_variant(name, small_caps, narrow_options, initialize=False)
    kinds = [layer.kind for layer in model.layers]
    assert kinds.count("subsample") == int(stepped)
    assert model.shapes[-2][0][:2] == (grid, grid)
    assert len(model.notes) == int(stepped)


def test_layer_names_and_stack(narrow_options, small_caps):
    model = build_variant("64-v1-2-2-k3", small_caps, narrow_options)
    names = [layer.name for layer in model.layers]
    assert names == ["conv-0", "conv-1", "maxpool-0", "subsample-0", "primary_caps-0", "class_caps-0"]
    assert model.layers[1].kind == "separable"
    assert model.fullname.startswith("64-v1-2-2-k3[conv-0_conv-1_")
    assert model.notes == ["one stride-2 step before the primary capsules, grid 16x16"]
    assert list(model.named_parameters())[:2] == ["conv-0.kernel", "conv-0.bias"]


def test_twins_share_every_common_tensor(narrow_options, small_caps):
    dw, sc = build_twins("32-v1-2-2-k5", small_caps, narrow_options, initialize=True)
    dw_params, sc_params = dw.named_parameters(), sc.named_parameters()
    for name in ("conv-0.kernel", "class_caps-0.W"):
        assert np.array_equal(dw_params[name].data, sc_params[name].data)
    assert "conv-1.pointwise" in dw_params and "conv-1.kernel" in sc_params


def test_initialization_is_seeded(small_caps):
    a = build_variant("32-v1-1-1-k3", small_caps, BuildOptions.reference(filters=8, seed=3))
    b = build_variant("32-v1-1-1-k3", small_caps, BuildOptions.reference(filters=8, seed=3))
    c = build_variant("32-v1-1-1-k3", small_caps, BuildOptions.reference(filters=8, seed=4))
    assert np.array_equal(a.parameters()[0].data, b.parameters()[0].data)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_filters_must_split_into_capsules(small_caps):
    with pytest.raises(BuildError):
        build_variant("32-v1-2-2-k3", small_caps, BuildOptions.reference(filters=12), initialize=False)


def test_second_conv_difference_matches_totals(small_caps):
    options = BuildOptions.reference(filters=64)
    comparison = twin_reduction("32-v2-2-1-k5", small_caps, options)
    assert comparison.dw == "32-v1-2-1-k5"
    assert comparison.second_conv_diff == comparison.sc_params - comparison.dw_params
    assert comparison.reduction_pct > 0


def test_one_conv_twins_are_identical(small_caps):
    comparison = twin_reduction("32-v1-1-1-k9", small_caps, BuildOptions.reference(filters=16))
    assert comparison.dw_params == comparison.sc_params
    assert comparison.reduction_pct == 0.0
    assert comparison.second_conv_diff == 0


def test_non_twins_are_rejected(small_caps):
    assert not is_twin_pair("32-v1-2-2-k3", "32-v2-2-2-k5")
    with pytest.raises(ContractError):
        compare_dw_vs_sc("32-v1-2-2-k3", "32-v2-2-2-k5", small_caps, BuildOptions.reference(filters=16))


@pytest.mark.parametrize("k", [3, 5, 7, 9])
def test_substituted_layer_reduction_without_bias(k):
    filters = 512
    model = build_variant(f"32-v1-2-2-k{k}", options=BuildOptions.reference(filters=filters), initialize=False)
    record = count_parameters(model, with_bias=False).layer("conv-1")
    assert Fraction(record.params, record.standard_params) == cost_ratio_exact(k, filters)
    assert Fraction(record.macs, record.standard_macs) == cost_ratio_exact(k, filters)


def test_routing_cost_record():
    caps = CapsuleConfig(8, 16, 29, 3)
    model = build_variant("32-v1-2-2-k3", caps, BuildOptions.reference(filters=16), initialize=False)
    report = count_parameters(model)
    routing = report.layer("class_caps-0.routing")
    pairs = 16 * 16 * 16 // 8 * 29
    assert routing.params == 0
    assert routing.macs == 3 * pairs * 16 + 2 * pairs * 16
    assert report.layer("class_caps-0").params == pairs * 8 * 16


def test_kernel_sweep(small_caps):
    options = BuildOptions.reference(filters=16)
    entries = kernel_sweep("32-v1-2-2", small_caps, options)
    assert [e.kernel_size for e in entries] == [9, 7, 5, 3]
    assert all(e.error is None for e in entries)
    params = [e.report.total_params for e in entries]
    assert params == sorted(params, reverse=True)
    direct = count_parameters(build_variant("32-v1-2-2-k3", small_caps, options, initialize=False))
    assert entries[-1].report.total_params == direct.total_params
    frame = sweep_frame(entries, small_caps, options)
    assert list(frame["kernel"]) == [9, 7, 5, 3]
    assert (frame["reduction_pct"] > 0).all()


def test_kernel_sweep_threads_agree(monkeypatch, small_caps):
    options = BuildOptions.reference(filters=16)
    single = [e.report.total_macs for e in kernel_sweep("64-v2-2-1", small_caps, options)]
    monkeypatch.setenv("DWCAPS_THREADS", "4")
    assert [e.report.total_macs for e in kernel_sweep("64-v2-2-1", small_caps, options)] == single


def test_full_model_gradients():
    caps = CapsuleConfig(primary_capsule_dim=8, class_capsule_dim=4, num_classes=3, routing_iterations=2,
                         differentiable_routing=True)
    model = build_variant("32-v1-2-2-k3", caps, BuildOptions.reference(filters=8, input_size=8))
    slots = [(model.layers_by_name[full.rsplit(".", 1)[0]], full.rsplit(".", 1)[1])
             for full in model.named_parameters()]
    images = make_rng(5).uniform(size=(2, 8, 8, 3))
    labels = np.array([0, 2])

    def loss(tensors):
        for (layer, key), t in zip(slots, tensors):
            layer.weights[key] = t
        return margin_loss(model.forward(Tensor(images)), labels)

    # positive conv tensors on positive pixels keep every ReLU strictly active
    start = [np.abs(t.data) + (0.05 if key.endswith("bias") else 0.0) if layer.kind != "class_caps" else t.data
             for (layer, key), t in zip(slots, model.parameters())]
    assert finite_difference_check(loss, start, h=1e-5, coords=8, seed=1) < 1e-4
