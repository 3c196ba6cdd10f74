import re
from dataclasses import dataclass, replace

from dwcaps_engine.core.utils.errors import ContractError, UsageError

CONV_TYPES = {"v1": "separable", "v2": "standard"}
INPUT_SIZES = (32, 64)
KERNEL_SIZES = (9, 7, 5, 3)

VARIANT_GRAMMAR = (
    "<input>-<type>-<convs>-<pool>-k<kernel> with input in {32, 64}, type in {v1 (DW), v2 (SC)}, "
    "convs in {1, 2}, pool in {1 (none), 2 (max-pooled, needs 2 convs)}, kernel in {9, 7, 5, 3}; "
    "sweeps take the same name without the -k<kernel> suffix, e.g. 32-v1-2-2"
)

_VARIANT = re.compile(r"^(32|64)-(v1|v2)-([12])-([12])-k(9|7|5|3)$")
_SWEEP_BASE = re.compile(r"^(32|64)-(v1|v2)-([12])-([12])$")


@dataclass(frozen=True)
class ArchitectureVariant:
    """
    One named capsule architecture, e.g. ``32-v1-2-2-k3``.

    ``conv_type`` v1 makes the second convolution depthwise separable (DW),
    v2 keeps it standard (SC). ``pool_flag`` 2 max-pools after the second
    convolution (Mini version); input 64 with pooling is the Max version.
    """

    input_size: int
    conv_type: str
    num_convs: int
    pool_flag: int
    kernel_size: int

    def __post_init__(self):
        if self.input_size not in INPUT_SIZES:
            raise ContractError(f"Input size must be one of {INPUT_SIZES}, got {self.input_size}.")
        if self.conv_type not in CONV_TYPES:
            raise ContractError(f"Convolution type must be v1 or v2, got {self.conv_type!r}.")
        if self.num_convs not in (1, 2):
            raise ContractError(f"Number of convolutions must be 1 or 2, got {self.num_convs}.")
        if self.pool_flag not in (1, 2):
            raise ContractError(f"Pool flag must be 1 or 2, got {self.pool_flag}.")
        if self.pool_flag == 2 and self.num_convs != 2:
            raise ContractError("Max pooling follows the second convolution: pool flag 2 needs 2 convolutions.")
        if self.kernel_size not in KERNEL_SIZES:
            raise ContractError(f"Kernel size must be one of {KERNEL_SIZES}, got {self.kernel_size}.")

    @property
    def name(self):
        return f"{self.input_size}-{self.conv_type}-{self.num_convs}-{self.pool_flag}-k{self.kernel_size}"

    @property
    def base_name(self):
        return f"{self.input_size}-{self.conv_type}-{self.num_convs}-{self.pool_flag}"

    @property
    def second_conv_mode(self):
        return CONV_TYPES[self.conv_type]

    @property
    def is_mini(self):
        return self.input_size == 32 and self.num_convs == 2 and self.pool_flag == 2

    @property
    def is_max(self):
        return self.input_size == 64 and self.num_convs == 2 and self.pool_flag == 2

    def twin(self):
        """Same geometry with the other convolution type."""
        return replace(self, conv_type="v2" if self.conv_type == "v1" else "v1")

    def with_kernel(self, kernel_size):
        return replace(self, kernel_size=kernel_size)

    def __str__(self):
        return self.name


def parse_variant(name):
    match = _VARIANT.match(str(name).strip())
    if match is None:
        raise UsageError(f"Unknown variant name {name!r}. Expected {VARIANT_GRAMMAR}.")
    size, conv_type, convs, pool, kernel = match.groups()
    try:
        return ArchitectureVariant(int(size), conv_type, int(convs), int(pool), int(kernel))
    except ContractError as err:
        raise UsageError(f"Invalid variant {name!r}: {err}") from err


def parse_sweep_base(name):
    """Variants of a kernel-less base name, one per kernel size (9, 7, 5, 3)."""
    match = _SWEEP_BASE.match(str(name).strip())
    if match is None:
        raise UsageError(f"Unknown sweep base {name!r}. Expected {VARIANT_GRAMMAR}.")
    return [parse_variant(f"{name.strip()}-k{k}") for k in KERNEL_SIZES]


def all_variants():
    """Every buildable variant, in naming order."""
    out = []
    for size in INPUT_SIZES:
        for conv_type in CONV_TYPES:
            for convs in (1, 2):
                for pool in (1, 2):
                    if pool == 2 and convs != 2:
                        continue
                    for k in KERNEL_SIZES:
                        out.append(ArchitectureVariant(size, conv_type, convs, pool, k))
    return out


class NameAssigner:
    """Utility to assign unique names to layers and build readable model identifiers."""

    def assign_layers(self, layers):
        # Name layers uniquely per kind:
        cpt = {}
        for layer in layers:
            if layer.kind_prefix in cpt.keys():
                cpt[layer.kind_prefix] += 1
            else:
                cpt[layer.kind_prefix] = 0
            layer.name = layer.kind_prefix + "-" + str(cpt[layer.kind_prefix])

        return {layer.name: layer for layer in layers}

    def build_full_name(self, variant, layers):
        """
        Builds a standardized name for the model as a string. example: 32-v1-2-2-k3[conv-0_conv-1_maxpool-0_...]
        """
        return str(variant) + "[" + "_".join(layer.name for layer in layers) + "]"
