import numpy as np

from dwcaps_engine.apis.layer_api import Layer_API
from dwcaps_engine.core.autograd.tensor import derive_seed, glorot_uniform
from dwcaps_engine.core.capsules.routing import dynamic_routing, predict_votes, primary_capsules
from dwcaps_engine.core.kernels.cost import LayerCost
from dwcaps_engine.core.utils.errors import ShapeError


class PrimaryCapsules(Layer_API):
    """Reshape the last feature map into squashed capsules of ``dim`` components."""

    kind_prefix = "primary_caps"
    kind = "primary_caps"

    def __init__(self, dim=8):
        super().__init__()
        self.dim = dim

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c % self.dim != 0:
            raise ShapeError(f"{c} channels cannot be cut into capsules of dimension {self.dim}.")
        return (h * w * c // self.dim, self.dim)

    def forward(self, x):
        return primary_capsules(x, self.dim)


class ClassCapsules(Layer_API):
    """
    Class capsules: one transform matrix per (input capsule, class) pair, then
    routing by agreement. ``W`` has shape [num_in, num_classes, in_dim, out_dim].
    """

    kind_prefix = "class_caps"
    kind = "class_caps"

    def __init__(self, num_in, in_dim, num_classes, out_dim, routing_iterations=3, differentiable=False):
        super().__init__()
        self.num_in = num_in
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.out_dim = out_dim
        self.routing_iterations = routing_iterations
        self.differentiable = differentiable

    def initialize(self, seed, dtype=np.float64):
        label = f"{self.name}.W"
        shape = (self.num_in, self.num_classes, self.in_dim, self.out_dim)
        self.weights.clear()
        self.weights["W"] = glorot_uniform(shape, self.num_in * self.in_dim, self.out_dim,
                                           derive_seed(seed, label), dtype=dtype, name=label)
        return self

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.num_in, self.in_dim):
            raise ShapeError(f"{self.name} expects poses {(self.num_in, self.in_dim)}, got {tuple(input_shape)}.")
        return (self.num_classes, self.out_dim)

    def forward(self, x, trace=None):
        votes = predict_votes(x, self.weights["W"])
        return dynamic_routing(votes, self.routing_iterations, differentiable=self.differentiable, trace=trace)

    def cost(self, input_shape, with_bias=True):
        self.output_shape(input_shape)
        pairs = self.num_in * self.num_classes
        votes = pairs * self.in_dim * self.out_dim
        r = self.routing_iterations
        # weighted sums on every pass, agreement updates on all but the last
        routing_macs = r * pairs * self.out_dim + (r - 1) * pairs * self.out_dim
        return [
            LayerCost(self.name, self.kind, votes, votes),
            LayerCost(f"{self.name}.routing", "routing", 0, routing_macs),
        ]
