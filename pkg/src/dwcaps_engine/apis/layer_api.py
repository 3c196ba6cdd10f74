from collections import OrderedDict

from dwcaps_engine.core.autograd.tensor import Tensor
from dwcaps_engine.core.utils.errors import CheckpointError


class Layer_API:
    """
    Class for layer definition.

    A layer maps an input shape to an output shape (without the batch axis),
    owns its weight tensors, and reports its own cost records. Names are given
    by :class:`NameAssigner` when the model is assembled.
    """

    kind_prefix = "layer"
    kind = "layer"

    def __init__(self):
        self.name = None
        self.weights = OrderedDict()

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        return x

    def cost(self, input_shape, with_bias=True):
        """List of :class:`LayerCost` records; layers without weights or MACs report nothing."""
        return []

    def parameters(self):
        return OrderedDict(self.weights)

    def set_parameter(self, key, value):
        if key not in self.weights:
            raise CheckpointError(f"Layer {self.name} has no tensor {key!r}.")
        current = self.weights[key]
        value = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True, dtype=current.dtype)
        if tuple(value.shape) != tuple(current.shape):
            raise CheckpointError(
                f"Tensor {self.name}.{key} has shape {tuple(value.shape)}, expected {tuple(current.shape)}."
            )
        value.name = current.name
        self.weights[key] = value

    def param_count(self):
        return sum(t.size for t in self.weights.values())

    def __str__(self):
        return f"{self.name} ({self.kind})"
