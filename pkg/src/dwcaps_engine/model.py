import logging
from collections import OrderedDict

import numpy as np

from dwcaps_engine.core.autograd.tensor import as_tensor, no_grad
from dwcaps_engine.core.capsules.routing import class_prediction
from dwcaps_engine.core.config.naming import NameAssigner
from dwcaps_engine.core.utils.errors import BuildError, CheckpointError, DwcapsError, ShapeError

logger = logging.getLogger(__name__)


class ModelGraph:
    """
    Ordered stack of layers from an image batch to class capsules.

    Parameters
    ----------
    variant: ArchitectureVariant
        The named architecture this graph realises.
    layers: list of Layer_API
        Layers in execution order; they are renamed uniquely here.
    caps: CapsuleConfig
        Capsule dimensions, class count and routing iterations.
    options: BuildOptions
        Width, grid cap, bias and initialisation settings used to build it.
    input_shape: tuple
        ``(H, W, C)`` of one image.

    Layer shapes are chained at construction; an incompatible stack raises
    :class:`BuildError`.
    """

    def __init__(self, variant, layers, caps, options, input_shape):
        self.variant = variant
        self.caps = caps
        self.options = options
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.layers_by_name = NameAssigner().assign_layers(self.layers)
        self.fullname = NameAssigner().build_full_name(variant, self.layers)

        self.shapes = []
        shape = self.input_shape
        for layer in self.layers:
            try:
                out = layer.output_shape(shape)
            except DwcapsError as err:
                raise BuildError(f"{variant}: layer {layer.name} cannot take input {shape}: {err}") from err
            self.shapes.append((shape, out))
            logger.debug("%s %s: %s -> %s", variant, layer.name, shape, out)
            shape = out
        self.output_shape = shape
        self.notes = []

    def initialize(self, seed, dtype=np.float64):
        for layer in self.layers:
            if hasattr(layer, "initialize"):
                layer.initialize(seed, dtype)
        return self

    # --- parameters -------------------------------------------------------
    def named_parameters(self):
        out = OrderedDict()
        for layer in self.layers:
            for key, tensor in layer.weights.items():
                out[f"{layer.name}.{key}"] = tensor
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def parameter_count(self):
        """Brute-force walk over every weight tensor."""
        return int(sum(t.size for t in self.parameters()))

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def load_named(self, arrays):
        """Replace every weight tensor by the array stored under its full name."""
        expected = self.named_parameters()
        missing = [k for k in expected if k not in arrays]
        unknown = [k for k in arrays if k not in expected]
        if missing or unknown:
            raise CheckpointError(f"Tensor names do not match the model: missing {missing}, unknown {unknown}.")
        for full_name in expected:
            layer_name, key = full_name.rsplit(".", 1)
            self.layers_by_name[layer_name].set_parameter(key, arrays[full_name])
        return self

    # --- execution --------------------------------------------------------
    def forward(self, images, trace=None):
        """Class capsules ``[B, num_classes, dim]`` for images ``[B, H, W, C]`` (or one ``[H, W, C]`` image)."""
        x = as_tensor(images)
        if tuple(x.shape[-3:]) != self.input_shape or x.ndim not in (3, 4):
            raise ShapeError(f"{self.variant} takes images of shape {self.input_shape}, got {x.shape}.")
        for layer in self.layers:
            if trace is not None and layer.kind == "class_caps":
                x = layer.forward(x, trace=trace)
            else:
                x = layer.forward(x)
        return x

    def predict(self, images):
        with no_grad():
            v = self.forward(images)
        return class_prediction(v)

    def __str__(self):
        lines = [self.fullname]
        for layer, (shape_in, shape_out) in zip(self.layers, self.shapes):
            lines.append(f"  {layer.name:<16} {layer.kind:<12} {str(shape_in):<16} -> {shape_out}")
        lines.append(f"  total parameters: {self.parameter_count()}")
        return "\n".join(lines)
