import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from dwcaps_engine.core.capsules.routing import CapsuleConfig
from dwcaps_engine.core.config.naming import ArchitectureVariant, parse_variant
from dwcaps_engine.core.kernels.conv import ConvSpec
from dwcaps_engine.core.utils.errors import BuildError, ContractError, DwcapsError
from dwcaps_engine.layers.capsules.capsules import ClassCapsules, PrimaryCapsules
from dwcaps_engine.layers.conv.conv import Conv2D
from dwcaps_engine.layers.pooling.pooling import MaxPool2D, Subsample2D
from dwcaps_engine.model import ModelGraph
from dwcaps_engine.specifications.specification_manager import reference_configuration

logger = logging.getLogger(__name__)

DTYPES = ("float64", "float32")


@dataclass(frozen=True)
class BuildOptions:
    """
    Knobs of the reference configuration. Defaults come from
    ``specifications/reference.yaml``; see :meth:`reference`.
    """

    filters: int = 512
    input_channels: int = 3
    capsule_grid: int = 16
    with_bias: bool = True
    padding: str = "same"
    pool_window: int = 2
    pool_stride: int = 2
    # Overrides the variant's input size (small geometry checks).
    input_size: Optional[int] = None
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("filters", "input_channels", "capsule_grid", "pool_window", "pool_stride"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"BuildOptions.{name} must be >= 1, got {getattr(self, name)}.")
        if self.input_size is not None and int(self.input_size) < 1:
            raise ContractError(f"BuildOptions.input_size must be >= 1, got {self.input_size}.")
        if self.dtype not in DTYPES:
            raise ContractError(f"dtype must be one of {DTYPES}, got {self.dtype!r}.")

    @classmethod
    def reference(cls, **overrides):
        arch = reference_configuration()["architecture"]
        values = {name: arch[name] for name in
                  ("filters", "input_channels", "capsule_grid", "with_bias", "padding", "pool_window", "pool_stride")}
        values.update(overrides)
        return cls(**values)

    def to_dict(self):
        return asdict(self)


def reference_capsules(**overrides):
    values = dict(reference_configuration()["capsules"])
    values.update(overrides)
    return CapsuleConfig(**values)


def as_variant(variant):
    if isinstance(variant, ArchitectureVariant):
        return variant
    return parse_variant(variant)


def build_variant(variant, caps: CapsuleConfig = None, options: BuildOptions = None, initialize=True):
    """
    Build the layer stack of ``variant``.

    SC conv (k, input channels -> filters); if two convolutions, a second
    filters -> filters conv, separable for v1 and standard for v2; max pooling
    when the pool flag is 2; a single stride-2 subsampling step when the
    spatial extent exceeds ``options.capsule_grid``; primary capsules; class
    capsules.

    With ``initialize=False`` the graph carries no weight tensors, which is
    enough for cost analysis of full-width models.
    """
    variant = as_variant(variant)
    caps = caps or reference_capsules()
    options = options or BuildOptions.reference()
    size = options.input_size or variant.input_size
    k, filters = variant.kernel_size, options.filters

    layers = [Conv2D(ConvSpec(k, options.input_channels, filters, padding=options.padding, mode="standard"),
                     with_bias=options.with_bias)]
    if variant.num_convs == 2:
        layers.append(Conv2D(ConvSpec(k, filters, filters, padding=options.padding, mode=variant.second_conv_mode),
                             with_bias=options.with_bias))
    if variant.pool_flag == 2:
        layers.append(MaxPool2D(options.pool_window, options.pool_stride))

    shape = (size, size, options.input_channels)
    try:
        for layer in layers:
            shape = layer.output_shape(shape)
    except DwcapsError as err:
        raise BuildError(f"{variant} does not fit a {size}x{size} input: {err}") from err

    notes = []
    if shape[0] > options.capsule_grid:
        sub = Subsample2D(2)
        shape = sub.output_shape(shape)
        layers.append(sub)
        notes.append(f"one stride-2 step before the primary capsules, grid {shape[0]}x{shape[1]}")
        logger.debug("%s: %s", variant, notes[-1])

    if filters % caps.primary_capsule_dim != 0:
        raise BuildError(f"{filters} filters cannot be cut into capsules of dimension {caps.primary_capsule_dim}.")
    num_primary = shape[0] * shape[1] * filters // caps.primary_capsule_dim
    layers.append(PrimaryCapsules(caps.primary_capsule_dim))
    layers.append(ClassCapsules(num_primary, caps.primary_capsule_dim, caps.num_classes, caps.class_capsule_dim,
                                caps.routing_iterations, differentiable=caps.differentiable_routing))

    model = ModelGraph(variant, layers, caps, options, (size, size, options.input_channels))
    model.notes = notes
    if initialize:
        model.initialize(options.seed, np.dtype(options.dtype))
    return model


def is_twin_pair(a, b):
    a, b = as_variant(a), as_variant(b)
    return a.conv_type != b.conv_type and a.twin() == b


def build_twins(variant, caps=None, options=None, initialize=False):
    """(DW model, SC model) of the geometry of ``variant``."""
    variant = as_variant(variant)
    dw = variant if variant.conv_type == "v1" else variant.twin()
    return (build_variant(dw, caps, options, initialize), build_variant(dw.twin(), caps, options, initialize))

