import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from dwcaps_engine.core.autograd.tensor import Tensor, backward, derive_seed, make_rng, no_grad
from dwcaps_engine.core.capsules.routing import margin_loss
from dwcaps_engine.core.config.naming import KERNEL_SIZES, parse_sweep_base
from dwcaps_engine.core.config.runtime import get_num_threads
from dwcaps_engine.core.dynamics.optimizers import make_optimizer
from dwcaps_engine.core.utils.checkpoint import checkpoint_bytes, checksum, load_checkpoint
from dwcaps_engine.core.utils.errors import ContractError, DivergenceError, UsageError
from dwcaps_engine.datasets import split
from dwcaps_engine.make_model import BuildOptions, build_variant, reference_capsules
from dwcaps_engine.model import ModelGraph
from dwcaps_engine.scores.classification import accuracy, confusion_matrix

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["epoch", "train_loss", "train_acc", "test_acc", "seconds"]
EVAL_BATCH = 64


@dataclass
class TrainConfig:
    variant: str = "32-v1-2-2-k3"
    filters: int = 16
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    subsample_fraction: float = 0.5
    split_ratio: float = 0.7
    dtype: str = "float64"
    # The seconds column stays 0.0 unless set, so run files compare byte for byte.
    record_wallclock: bool = False
    capsules: Dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}.")
        if int(self.batch_size) < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}.")
        if not 0.0 < float(self.subsample_fraction) <= 1.0:
            raise ContractError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}.")
        if not 0.0 < float(self.split_ratio) < 1.0:
            raise ContractError(f"split_ratio must lie in (0, 1), got {self.split_ratio}.")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}.")
        if float(self.learning_rate) <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}.")

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    rows: List[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    model_checksum: str = ""

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=RUN_COLUMNS)

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path

    @property
    def train_loss(self):
        return [r["train_loss"] for r in self.rows]

    @property
    def train_acc(self):
        return [r["train_acc"] for r in self.rows]

    @property
    def test_acc(self):
        return [r["test_acc"] for r in self.rows]


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    predictions: np.ndarray
    class_names: List[str]


def _chunks(count, size):
    return [np.arange(start, min(start + size, count)) for start in range(0, count, size)]


def predict_arrays(model, images, batch_size=EVAL_BATCH):
    """
    Class predictions for ``images`` in fixed-size chunks. Chunks run on up to
    ``DWCAPS_THREADS`` threads; chunk boundaries do not depend on the thread
    count, so results do not either.
    """
    dtype = np.dtype(model.options.dtype)
    chunks = _chunks(len(images), batch_size)
    if not chunks:
        return np.zeros(0, dtype=np.int64)
    parts = Parallel(n_jobs=get_num_threads(), backend="threading")(
        delayed(model.predict)(Tensor(images[idx], dtype=dtype)) for idx in chunks
    )
    return np.concatenate([np.atleast_1d(p) for p in parts]).astype(np.int64)


def mean_loss(model, images, labels, batch_size=EVAL_BATCH):
    dtype = np.dtype(model.options.dtype)
    total = 0.0
    with no_grad():
        for idx in _chunks(len(images), batch_size):
            v = model.forward(Tensor(images[idx], dtype=dtype))
            total += margin_loss(v, labels[idx]).item() * len(idx)
    return total / max(1, len(images))


def _check_compatible(model, data):
    if model.caps.num_classes != data.num_classes:
        raise ContractError(
            f"Model predicts {model.caps.num_classes} classes, dataset has {data.num_classes}."
        )
    if tuple(data.images.shape[1:]) != model.input_shape:
        raise ContractError(f"Model takes images {model.input_shape}, dataset holds {data.images.shape[1:]}.")


def train(model: ModelGraph, data, cfg: TrainConfig, out_dir=None) -> RunRecord:
    """
    Mini-batch training on the margin loss.

    Unsplit data is split with the config's ratio, subsample fraction and
    seed. After every epoch the train and test accuracies are measured. With
    ``out_dir`` the run is written to ``run.csv`` and ``model.ckpt``.
    """
    _check_compatible(model, data)
    if not data.is_split:
        data = split(data, cfg.split_ratio, cfg.subsample_fraction, cfg.seed)
    x_train, y_train = data.train_view()
    x_test, y_test = data.test_view()
    dtype = np.dtype(model.options.dtype)

    optimizer = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate, cfg.momentum)
    rng = make_rng(derive_seed(cfg.seed, "shuffle"))
    record = RunRecord(initial_loss=mean_loss(model, x_train, y_train))
    logger.info("%s: %d train / %d test items, initial loss %.6f",
                model.variant, len(y_train), len(y_test), record.initial_loss)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(y_train))
        total = 0.0
        for b, first in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[first:first + cfg.batch_size]
            optimizer.zero_grad()
            loss = margin_loss(model.forward(Tensor(x_train[idx], dtype=dtype)), y_train[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"Loss became {value} at epoch {epoch}, batch {b} "
                    f"(learning rate {cfg.learning_rate}, optimizer {cfg.optimizer})."
                )
            backward(loss)
            optimizer.step()
            total += value * len(idx)
        train_acc = accuracy(predict_arrays(model, x_train), y_train)
        test_acc = accuracy(predict_arrays(model, x_test), y_test)
        seconds = time.perf_counter() - start
        record.rows.append({
            "epoch": epoch,
            "train_loss": total / len(y_train),
            "train_acc": train_acc,
            "test_acc": test_acc,
            "seconds": round(seconds, 3) if cfg.record_wallclock else 0.0,
        })
        logger.info("epoch %d/%d loss %.6f train_acc %.4f test_acc %.4f (%.2fs)",
                    epoch, cfg.epochs, record.rows[-1]["train_loss"], train_acc, test_acc, seconds)

    extra = {"seed": cfg.seed, "split_ratio": cfg.split_ratio,
             "subsample_fraction": cfg.subsample_fraction, "epochs": cfg.epochs}
    data_bytes = checkpoint_bytes(model, extra)
    record.model_checksum = checksum(data_bytes)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        record.to_csv(out_dir / "run.csv")
        (out_dir / "model.ckpt").write_bytes(data_bytes)
        logger.info("Run written to %s (checkpoint sha256 %s)", out_dir, record.model_checksum)
    model.checkpoint_extra = extra
    return record


def evaluate(checkpoint, data, batch_size=EVAL_BATCH) -> EvalResult:
    """
    Accuracy and confusion counts of a checkpoint (path or model) on the test
    split of ``data``, or on every item when ``data`` is unsplit.
    """
    model = checkpoint if isinstance(checkpoint, ModelGraph) else load_checkpoint(checkpoint)
    _check_compatible(model, data)
    images, labels = data.test_view()
    predictions = predict_arrays(model, images, batch_size)
    confusion = confusion_matrix(predictions, labels, data.num_classes)
    return EvalResult(accuracy(predictions, labels), confusion, predictions, list(data.class_names))


TWIN_COLUMNS = ["kernel", "conv_type", "variant"] + RUN_COLUMNS


def twin_kernel_runs(base, data, cfg: TrainConfig, kernels=None, caps=None, options=None, out_dir=None):
    """
    Train the DW and SC twins of every kernel size of ``base`` (e.g.
    ``32-v1-2-2``) on one shared split, DW first at each kernel.

    Returns the epoch rows of all runs in long form (``TWIN_COLUMNS``). With
    ``out_dir`` each run is written under ``out_dir/<variant>`` and the
    combined rows to ``out_dir/twins.csv``.
    """
    variants = parse_sweep_base(base)
    if kernels:
        unknown = sorted(set(kernels) - {v.kernel_size for v in variants})
        if unknown:
            raise UsageError(f"Kernel sizes {unknown} are not part of the sweep {KERNEL_SIZES}.")
        variants = [v for v in variants if v.kernel_size in kernels]
    if not data.is_split:
        data = split(data, cfg.split_ratio, cfg.subsample_fraction, cfg.seed)
    caps = caps or reference_capsules(**{"num_classes": data.num_classes, **cfg.capsules})
    options = options or BuildOptions.reference(filters=cfg.filters, seed=cfg.seed, dtype=cfg.dtype)

    frames = []
    for v in variants:
        dw = v if v.conv_type == "v1" else v.twin()
        for variant in (dw, dw.twin()):
            model = build_variant(variant, caps, options)
            run_dir = None if out_dir is None else Path(out_dir) / variant.name
            record = train(model, data, replace(cfg, variant=variant.name), out_dir=run_dir)
            frame = record.to_frame()
            frame.insert(0, "variant", variant.name)
            frame.insert(0, "conv_type", variant.conv_type)
            frame.insert(0, "kernel", variant.kernel_size)
            frames.append(frame)
    runs = pd.concat(frames, ignore_index=True)[TWIN_COLUMNS]
    if out_dir is not None:
        runs.to_csv(Path(out_dir) / "twins.csv", index=False, float_format="%.10g")
    return runs
