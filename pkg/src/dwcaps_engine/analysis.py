"""
Parameter and MAC analysis of capsule variants: per-layer cost reports,
DW-vs-SC twin comparisons, kernel sweeps and the reference reduction table.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import pandas as pd
from joblib import Parallel, delayed

from dwcaps_engine.core.config.naming import parse_sweep_base
from dwcaps_engine.core.config.runtime import get_num_threads
from dwcaps_engine.core.kernels.cost import CostReport
from dwcaps_engine.core.utils.errors import ContractError, DwcapsError
from dwcaps_engine.make_model import BuildOptions, as_variant, build_variant, is_twin_pair
from dwcaps_engine.model import ModelGraph
from dwcaps_engine.specifications.specification_manager import load_claims_table

logger = logging.getLogger(__name__)


def count_parameters(model: ModelGraph, with_bias=True) -> CostReport:
    """Per-layer parameters and MACs, evaluated at the spatial extent each layer produces."""
    records = []
    for layer, (shape_in, _) in zip(model.layers, model.shapes):
        records.extend(layer.cost(shape_in, with_bias=with_bias))
    return CostReport(records=records, notes=list(model.notes))


@dataclass
class TwinComparison:
    dw: str
    sc: str
    dw_params: int
    sc_params: int
    reduction_pct: float
    # Difference of the second convolution alone; equals sc_params - dw_params.
    second_conv_diff: int


def _model(x, caps, options):
    return x if isinstance(x, ModelGraph) else build_variant(x, caps, options, initialize=False)


def compare_dw_vs_sc(dw, sc, caps=None, options=None, with_bias=True) -> TwinComparison:
    """100 * (1 - params(DW) / params(SC)) for a v1/v2 pair of the same geometry."""
    dw_model, sc_model = _model(dw, caps, options), _model(sc, caps, options)
    if dw_model.variant.conv_type != "v1" or not is_twin_pair(dw_model.variant, sc_model.variant):
        raise ContractError(f"{dw_model.variant} and {sc_model.variant} are not a DW/SC twin pair.")
    if dw_model.options != sc_model.options or dw_model.caps != sc_model.caps:
        raise ContractError("Twins must be built with the same options and capsule configuration.")
    dw_report = count_parameters(dw_model, with_bias)
    sc_report = count_parameters(sc_model, with_bias)
    dw_total, sc_total = dw_report.total_params, sc_report.total_params
    diff = 0
    if dw_model.variant.num_convs == 2:
        diff = sc_report.layer("conv-1").params - dw_report.layer("conv-1").params
    return TwinComparison(
        dw=dw_model.variant.name,
        sc=sc_model.variant.name,
        dw_params=dw_total,
        sc_params=sc_total,
        reduction_pct=100.0 * (1.0 - dw_total / sc_total),
        second_conv_diff=diff,
    )


def twin_reduction(variant, caps=None, options=None, with_bias=True) -> TwinComparison:
    """Comparison of ``variant`` with its twin, whichever of the two it is."""
    variant = as_variant(variant)
    dw = variant if variant.conv_type == "v1" else variant.twin()
    return compare_dw_vs_sc(dw, dw.twin(), caps, options, with_bias)


@dataclass
class SweepEntry:
    kernel_size: int
    variant: str
    model: Optional[ModelGraph] = None
    report: Optional[CostReport] = None
    error: Optional[str] = None


def _sweep_entry(variant, caps, options, with_bias, initialize):
    try:
        model = build_variant(variant, caps, options, initialize=initialize)
        return SweepEntry(variant.kernel_size, variant.name, model, count_parameters(model, with_bias))
    except DwcapsError as err:
        logger.warning("Sweep entry %s failed: %s", variant, err)
        return SweepEntry(variant.kernel_size, variant.name, error=str(err))


def kernel_sweep(base, caps=None, options=None, with_bias=True, initialize=False) -> List[SweepEntry]:
    """
    One model and cost report per kernel size (9, 7, 5, 3) of a base name
    such as ``32-v1-2-2``. An entry that fails to build carries the error
    message and the sweep moves on.
    """
    variants = parse_sweep_base(base)
    entries = Parallel(n_jobs=get_num_threads(), backend="threading")(
        delayed(_sweep_entry)(v, caps, options, with_bias, initialize) for v in variants
    )
    return list(entries)


def sweep_frame(entries, caps=None, options=None, with_bias=True):
    rows = []
    for e in entries:
        row = {"kernel": e.kernel_size, "variant": e.variant, "params": None, "macs": None,
               "twin_params": None, "reduction_pct": None, "error": e.error or ""}
        if e.report is not None:
            row["params"] = e.report.total_params
            row["macs"] = e.report.total_macs
            comparison = twin_reduction(e.variant, caps, options, with_bias)
            row["twin_params"] = comparison.sc_params if e.variant == comparison.dw else comparison.dw_params
            row["reduction_pct"] = round(comparison.reduction_pct, 1)
        rows.append(row)
    return pd.DataFrame(rows, columns=["kernel", "variant", "params", "macs", "twin_params", "reduction_pct", "error"])


def reduction_claims(options=None, caps=None, with_bias=True):
    """
    Reference twin pairs against their target reductions.

    Columns: label, dw, sc, dw_params, sc_params, computed_pct, target_pct,
    within_tolerance.
    """
    table = load_claims_table()
    tolerance = table.attrs["tolerance_pct"]
    options = options or BuildOptions.reference()
    rows = []
    for _, claim in table.iterrows():
        comparison = compare_dw_vs_sc(claim["dw"], claim["sc"], caps, options, with_bias)
        computed = round(comparison.reduction_pct, 1)
        rows.append({
            "label": claim["label"],
            "dw": claim["dw"],
            "sc": claim["sc"],
            "dw_params": comparison.dw_params,
            "sc_params": comparison.sc_params,
            "computed_pct": computed,
            "target_pct": float(claim["target_pct"]),
            "within_tolerance": abs(computed - float(claim["target_pct"])) <= tolerance,
        })
    return pd.DataFrame(rows)
