"""
Closed-form parameter and multiply-accumulate (MAC) counts.

    standard   D_K*D_K*M*N*D_F*D_F
    depthwise  D_K*D_K*M*D_F*D_F
    separable  D_K*D_K*M*D_F*D_F + M*N*D_F*D_F
    ratio      separable / standard = 1/N + 1/D_K^2
"""

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

import pandas as pd

from dwcaps_engine.core.utils.errors import DomainError


def _positive(**values):
    for name, v in values.items():
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise DomainError(f"{name} must be a positive integer, got {v!r}.")
    return [int(v) for v in values.values()]


def mac_standard(D_K, M, N, D_F):
    D_K, M, N, D_F = _positive(D_K=D_K, M=M, N=N, D_F=D_F)
    return D_K * D_K * M * N * D_F * D_F


def mac_depthwise(D_K, M, D_F):
    D_K, M, D_F = _positive(D_K=D_K, M=M, D_F=D_F)
    return D_K * D_K * M * D_F * D_F


def mac_pointwise(M, N, D_F):
    M, N, D_F = _positive(M=M, N=N, D_F=D_F)
    return M * N * D_F * D_F


def mac_separable(D_K, M, N, D_F):
    return mac_depthwise(D_K, M, D_F) + mac_pointwise(M, N, D_F)


def cost_ratio_exact(D_K, N):
    D_K, N = _positive(D_K=D_K, N=N)
    return Fraction(1, N) + Fraction(1, D_K * D_K)


def cost_ratio(D_K, N):
    """1/N + 1/D_K^2, the separable-over-standard cost."""
    return float(cost_ratio_exact(D_K, N))


def param_count(spec, with_bias=True):
    """Trainable parameters of one convolution; separable mode counts both biases."""
    k, m, n = spec.kernel_size, spec.in_channels, spec.output_channels
    if spec.mode == "standard":
        return k * k * m * n + (n if with_bias else 0)
    if spec.mode == "depthwise":
        return k * k * m + (m if with_bias else 0)
    if spec.mode == "pointwise":
        return m * n + (n if with_bias else 0)
    return k * k * m + m * n + (m + n if with_bias else 0)


def mac_count(spec, D_F):
    """MACs of one convolution producing a D_F x D_F map (D_F = D_G for same padding, stride 1)."""
    k, m, n = spec.kernel_size, spec.in_channels, spec.output_channels
    if spec.mode == "standard":
        return mac_standard(k, m, n, D_F)
    if spec.mode == "depthwise":
        return mac_depthwise(k, m, D_F)
    if spec.mode == "pointwise":
        return mac_pointwise(m, n, D_F)
    return mac_separable(k, m, n, D_F)


@dataclass
class LayerCost:
    layer: str
    kind: str
    params: int
    macs: int
    # For separable layers: what the same geometry would cost as a standard conv.
    standard_params: Optional[int] = None
    standard_macs: Optional[int] = None


@dataclass
class CostReport:
    records: List[LayerCost] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def total_params(self):
        return sum(r.params for r in self.records)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.records)

    def _ratio(self, attr, standard_attr):
        substituted = [r for r in self.records if getattr(r, standard_attr) is not None]
        if not substituted:
            return None
        return float(Fraction(sum(getattr(r, attr) for r in substituted),
                              sum(getattr(r, standard_attr) for r in substituted)))

    @property
    def separable_over_standard_macs(self):
        return self._ratio("macs", "standard_macs")

    @property
    def separable_over_standard_params(self):
        return self._ratio("params", "standard_params")

    def layer(self, name):
        for r in self.records:
            if r.layer == name:
                return r
        raise KeyError(name)

    def to_frame(self):
        return pd.DataFrame(
            [{"layer": r.layer, "kind": r.kind, "params": r.params, "macs": r.macs} for r in self.records],
            columns=["layer", "kind", "params", "macs"],
        )

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path
