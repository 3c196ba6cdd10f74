from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from dwcaps_engine.analysis import kernel_sweep, sweep_frame
from dwcaps_engine.core.autograd.tensor import Tensor
from dwcaps_engine.core.capsules.routing import CapsuleConfig
from dwcaps_engine.core.dynamics.optimizers import SGD, Adam, make_optimizer
from dwcaps_engine.core.utils.errors import ContractError, DivergenceError, FormatError, UsageError
from dwcaps_engine.datasets import generate_synthetic, split
from dwcaps_engine.make_model import BuildOptions, build_variant, reference_capsules
from dwcaps_engine.rendering.monitoring import plot_parameter_bars, plot_twin_runs
from dwcaps_engine.run_model import (
    RUN_COLUMNS,
    TWIN_COLUMNS,
    TrainConfig,
    evaluate,
    mean_loss,
    predict_arrays,
    train,
    twin_kernel_runs,
)
from dwcaps_engine.scores.classification import accuracy_from_confusion, confusion_matrix


@pytest.fixture
def small_model(small_caps, narrow_options):
    return build_variant("32-v1-2-2-k3", small_caps, narrow_options)


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(split_ratio=1.0)
    with pytest.raises(ContractError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig().to_dict()["variant"] == "32-v1-2-2-k3"


def test_one_epoch_smoke(tmp_path, small_model, three_class_set):
    cfg = TrainConfig(epochs=1, batch_size=8)
    record = train(small_model, three_class_set, cfg, out_dir=tmp_path)
    assert len(record.rows) == 1
    frame = pd.read_csv(tmp_path / "run.csv")
    assert list(frame.columns) == RUN_COLUMNS
    assert frame["seconds"].tolist() == [0.0]
    assert 0.0 <= frame["train_acc"][0] <= 1.0
    assert (tmp_path / "model.ckpt").exists()
    assert len(record.model_checksum) == 64
    assert small_model.checkpoint_extra["split_ratio"] == 0.7


def test_loss_goes_down(small_model, three_class_set):
    cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=5e-3, subsample_fraction=1.0)
    record = train(small_model, three_class_set, cfg)
    assert record.train_loss[-1] < record.initial_loss


def test_training_is_reproducible(small_caps, narrow_options, three_class_set):
    cfg = TrainConfig(epochs=2, batch_size=8, optimizer="sgd", learning_rate=1e-2)
    first = train(build_variant("32-v2-2-1-k3", small_caps, narrow_options), three_class_set, cfg)
    second = train(build_variant("32-v2-2-1-k3", small_caps, narrow_options), three_class_set, cfg)
    assert first.rows == second.rows
    assert first.model_checksum == second.model_checksum


def test_wallclock_is_opt_in(small_model, three_class_set):
    record = train(small_model, three_class_set, TrainConfig(epochs=1, batch_size=16, record_wallclock=True))
    assert record.rows[0]["seconds"] >= 0.0


def test_divergence_is_reported(small_model, three_class_set):
    small_model.parameters()[0].assign(np.full(small_model.parameters()[0].shape, np.nan))
    with pytest.raises(DivergenceError, match="epoch 1"):
        train(small_model, three_class_set, TrainConfig(epochs=1, batch_size=8))


def test_class_count_must_match(small_model):
    with pytest.raises(ContractError):
        train(small_model, generate_synthetic(4, 4), TrainConfig(epochs=1))


def test_evaluate_checkpoint(tmp_path, small_model, three_class_set):
    train(small_model, three_class_set, TrainConfig(epochs=1, batch_size=8), out_dir=tmp_path)
    result = evaluate(tmp_path / "model.ckpt", three_class_set)
    assert result.confusion.sum() == three_class_set.count
    assert accuracy_from_confusion(result.confusion) == pytest.approx(result.accuracy)
    again = evaluate(tmp_path / "model.ckpt", three_class_set)
    assert np.array_equal(result.predictions, again.predictions)
    assert result.class_names == three_class_set.class_names


def test_predictions_do_not_depend_on_threads(monkeypatch, small_model, three_class_set):
    single = predict_arrays(small_model, three_class_set.images, batch_size=7)
    monkeypatch.setenv("DWCAPS_THREADS", "3")
    assert np.array_equal(predict_arrays(small_model, three_class_set.images, batch_size=7), single)
    assert mean_loss(small_model, three_class_set.images, three_class_set.labels) > 0.0


def test_confusion_rows_are_true_classes():
    confusion = confusion_matrix(np.array([1, 1, 0]), np.array([0, 1, 0]), 2)
    assert confusion.tolist() == [[1, 1], [0, 1]]
    assert accuracy_from_confusion(confusion) == pytest.approx(2 / 3)


def test_optimizers_step_against_the_gradient():
    for optimizer_cls in (SGD, Adam):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        optimizer = optimizer_cls([w], learning_rate=0.1)
        (w * w).sum().backward()
        optimizer.step()
        assert np.all(np.abs(w.data) < [1.0, 2.0])
        optimizer.zero_grad()
    assert isinstance(make_optimizer("sgd", [], 0.1), SGD)
    with pytest.raises(ContractError):
        make_optimizer("lbfgs", [], 0.1)


def test_twin_kernel_runs(tmp_path, three_class_set):
    cfg = TrainConfig(epochs=2, filters=8, batch_size=8, subsample_fraction=1.0)
    runs = twin_kernel_runs("32-v2-2-2", three_class_set, cfg, kernels=[5, 3], out_dir=tmp_path)
    assert list(runs.columns) == TWIN_COLUMNS
    assert list(runs["variant"].unique()) == ["32-v1-2-2-k5", "32-v2-2-2-k5", "32-v1-2-2-k3", "32-v2-2-2-k3"]
    assert len(runs) == 8
    assert (tmp_path / "32-v2-2-2-k3" / "model.ckpt").exists()
    assert len(pd.read_csv(tmp_path / "twins.csv")) == 8

    # every run sees the same split as a plain training run
    data = split(three_class_set, cfg.split_ratio, cfg.subsample_fraction, cfg.seed)
    model = build_variant("32-v1-2-2-k3", reference_capsules(num_classes=3), BuildOptions.reference(filters=8))
    record = train(model, data, cfg)
    dw = runs[runs["variant"] == "32-v1-2-2-k3"]
    assert list(dw["test_acc"]) == record.test_acc
    assert list(dw["train_loss"]) == pytest.approx(record.train_loss, rel=1e-12)

    assert "<svg" in plot_twin_runs(runs, tmp_path / "twins.svg").read_text()
    assert "<svg" in plot_twin_runs(tmp_path / "twins.csv", tmp_path / "again.svg").read_text()


def test_twin_kernel_runs_rejects_unknown_kernels(three_class_set):
    with pytest.raises(UsageError):
        twin_kernel_runs("32-v1-2-2", three_class_set, TrainConfig(epochs=1, filters=8), kernels=[11])


def test_twin_chart_needs_its_columns(tmp_path):
    pd.DataFrame({"epoch": [1], "test_acc": [0.5]}).to_csv(tmp_path / "run.csv", index=False)
    with pytest.raises(FormatError):
        plot_twin_runs(tmp_path / "run.csv", tmp_path / "x.svg")


def test_parameter_bars(tmp_path, small_caps):
    options = BuildOptions.reference(filters=16)
    frame = pd.concat([sweep_frame(kernel_sweep(base, small_caps, options), small_caps, options)
                       for base in ("32-v2-2-2", "32-v1-2-1")], ignore_index=True)
    assert (frame["params"][:4] > frame["twin_params"][:4]).all()
    assert "<svg" in plot_parameter_bars(frame, tmp_path / "params.svg").read_text()
    with pytest.raises(ContractError):
        plot_parameter_bars(frame.iloc[0:0], tmp_path / "none.svg")


@pytest.mark.slow
@pytest.mark.parametrize("variant", ["32-v1-2-2-k3", "32-v2-2-2-k3"])
def test_desk_scale_learning(variant):
    data = generate_synthetic(3, 167, size=32, seed=0)
    model = build_variant(variant, CapsuleConfig(num_classes=3), BuildOptions.reference(filters=16))
    record = train(model, data, TrainConfig(variant=variant, epochs=20, subsample_fraction=1.0))
    assert max(record.train_acc) >= 0.90


@pytest.mark.slow
def test_memorizes_ten_items():
    data = generate_synthetic(10, 1, size=32, seed=2)
    everything = np.arange(data.count)
    data = replace(data, train_idx=everything, test_idx=everything)
    model = build_variant("32-v1-2-2-k3", CapsuleConfig(num_classes=10), BuildOptions.reference(filters=16))
    record = train(model, data, TrainConfig(epochs=200, batch_size=10, learning_rate=3e-3))
    assert record.train_acc[-1] == 1.0
