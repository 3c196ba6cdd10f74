import numpy as np

from dwcaps_engine.core.utils.errors import ContractError


class Optimizer:
    """Updates trainable leaves in place (via ``Tensor.assign``) from their ``grad``."""

    def __init__(self, parameters, learning_rate):
        if learning_rate <= 0:
            raise ContractError(f"Learning rate must be positive, got {learning_rate}.")
        self.parameters = list(parameters)
        self.learning_rate = float(learning_rate)

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    """Plain SGD, with heavy-ball momentum when ``momentum`` > 0."""

    def __init__(self, parameters, learning_rate=1e-2, momentum=0.0):
        super().__init__(parameters, learning_rate)
        self.momentum = float(momentum)
        self.velocity = [np.zeros(p.shape, dtype=p.dtype) for p in self.parameters]

    def step(self):
        for i, p in enumerate(self.parameters):
            if p.grad is None:
                continue
            g = p.grad.data
            if self.momentum > 0:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.assign(p.data - self.learning_rate * g)


class Adam(Optimizer):
    def __init__(self, parameters, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(parameters, learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(p.shape, dtype=p.dtype) for p in self.parameters]
        self.v = [np.zeros(p.shape, dtype=p.dtype) for p in self.parameters]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.parameters):
            if p.grad is None:
                continue
            g = p.grad.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.assign(p.data - self.learning_rate * update)


def make_optimizer(name, parameters, learning_rate, momentum=0.9):
    if name == "adam":
        return Adam(parameters, learning_rate)
    if name == "sgd":
        return SGD(parameters, learning_rate, momentum)
    raise ContractError(f"Unknown optimizer {name!r}; expected 'adam' or 'sgd'.")
