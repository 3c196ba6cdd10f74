import pytest

from dwcaps_engine.core.capsules.routing import CapsuleConfig
from dwcaps_engine.datasets import generate_synthetic, split
from dwcaps_engine.make_model import BuildOptions, build_variant
from dwcaps_engine.run_model import TrainConfig, train
from dwcaps_engine.scores.classification import linear_probe_accuracy


@pytest.fixture(scope="module")
def desk_set():
    return split(generate_synthetic(3, 167, size=32, seed=0), ratio=0.7, subsample_fraction=1.0, seed=0)


def test_raw_pixels_are_not_linearly_separable(desk_set):
    # every class mixes positive and negative drawings
    assert linear_probe_accuracy(desk_set) < 0.75


@pytest.mark.slow
def test_capsules_beat_a_linear_read_out(desk_set):
    baseline = linear_probe_accuracy(desk_set)
    model = build_variant("32-v1-2-2-k3", CapsuleConfig(num_classes=3), BuildOptions.reference(filters=16))
    record = train(model, desk_set, TrainConfig(epochs=20, subsample_fraction=1.0))
    margin = record.test_acc[-1] - baseline
    assert margin > 0.1, f"capsules {record.test_acc[-1]:.3f} vs linear {baseline:.3f}"
