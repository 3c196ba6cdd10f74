from dwcaps_engine.apis.layer_api import Layer_API
from dwcaps_engine.core.kernels.conv import maxpool2d, subsample2d
from dwcaps_engine.core.utils.errors import GeometryError


class MaxPool2D(Layer_API):
    kind_prefix = "maxpool"
    kind = "maxpool"

    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window = window
        self.stride = stride

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if self.window > h or self.window > w:
            raise GeometryError(f"Pooling window {self.window} exceeds the {h}x{w} map.")
        return ((h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c)

    def forward(self, x):
        return maxpool2d(x, self.window, self.stride)


class Subsample2D(Layer_API):
    """Stride step in front of the primary capsules; keeps every other row and column."""

    kind_prefix = "subsample"
    kind = "subsample"

    def __init__(self, stride=2):
        super().__init__()
        self.stride = stride

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (-(-h // self.stride), -(-w // self.stride), c)

    def forward(self, x):
        return subsample2d(x, self.stride)
