import logging

import numpy as np

from dwcaps_engine.apis.layer_api import Layer_API
from dwcaps_engine.core.autograd.tensor import Tensor, derive_seed, glorot_uniform, relu
from dwcaps_engine.core.kernels.conv import ConvSpec, ConvWeights, apply_conv
from dwcaps_engine.core.kernels.cost import LayerCost, mac_count, param_count
from dwcaps_engine.core.utils.errors import ShapeError

logger = logging.getLogger(__name__)


class Conv2D(Layer_API):
    """
    Convolution block: one convolution in ``spec.mode`` followed by a ReLU.

    Standard blocks hold ``kernel`` and ``bias``; separable blocks hold
    ``depthwise``, ``depthwise_bias``, ``pointwise`` and ``bias``.
    """

    kind_prefix = "conv"

    def __init__(self, spec: ConvSpec, with_bias=True, activation="relu"):
        super().__init__()
        self.spec = spec
        self.with_bias = with_bias
        self.activation = activation

    @property
    def kind(self):
        return self.spec.mode

    def initialize(self, seed, dtype=np.float64):
        k, m, n = self.spec.kernel_size, self.spec.in_channels, self.spec.output_channels

        def draw(key, shape, fan_in, fan_out):
            label = f"{self.name}.{key}"
            self.weights[key] = glorot_uniform(shape, fan_in, fan_out, derive_seed(seed, label),
                                               dtype=dtype, name=label)

        def zeros(key, extent):
            self.weights[key] = Tensor(np.zeros(extent, dtype=dtype), requires_grad=True,
                                       name=f"{self.name}.{key}")

        self.weights.clear()
        if self.spec.mode == "standard":
            draw("kernel", (k, k, m, n), k * k * m, k * k * n)
        elif self.spec.mode in ("depthwise", "separable"):
            # depthwise fans follow the [k, k, M, 1] kernel layout
            draw("depthwise", (k, k, m), k * k * m, k * k)
            if self.with_bias and self.spec.mode == "separable":
                zeros("depthwise_bias", m)
        if self.spec.mode in ("pointwise", "separable"):
            draw("pointwise", (1, 1, m, n), m, n)
        if self.with_bias:
            zeros("bias", n)
        return self

    def conv_weights(self):
        return ConvWeights(**dict(self.weights))

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.spec.in_channels:
            raise ShapeError(f"{self.name} expects {self.spec.in_channels} channels, got {c}.")
        return (self.spec.output_size(h), self.spec.output_size(w), self.spec.output_channels)

    def forward(self, x):
        y = apply_conv(x, self.conv_weights(), self.spec)
        return relu(y) if self.activation == "relu" else y

    def cost(self, input_shape, with_bias=True):
        bias = with_bias and self.with_bias
        extent = self.output_shape(input_shape)[0]
        record = LayerCost(self.name, self.kind, param_count(self.spec, bias), mac_count(self.spec, extent))
        if self.spec.mode == "separable":
            standard = ConvSpec(self.spec.kernel_size, self.spec.in_channels, self.spec.out_channels,
                                stride=self.spec.stride, padding=self.spec.padding, mode="standard")
            record.standard_params = param_count(standard, bias)
            record.standard_macs = mac_count(standard, extent)
        return [record]
