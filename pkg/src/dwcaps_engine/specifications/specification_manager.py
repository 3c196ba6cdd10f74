import os
from functools import lru_cache
from pathlib import Path

import pandas
import yaml

file_path = Path(os.path.realpath(__file__))
CURRENT_DIR = file_path.parent


def load_yaml(spec_file):
    string = CURRENT_DIR / spec_file
    with open(string, "r", encoding="utf8") as file:
        doc_yaml = yaml.safe_load(file)  # Note the safe_load
        return doc_yaml


@lru_cache(maxsize=None)
def _reference():
    return load_yaml("reference.yaml")


def reference_configuration():
    """Copy of ``reference.yaml`` (callers may mutate it)."""
    ref = _reference()
    return {k: dict(v) if isinstance(v, dict) else v for k, v in ref.items()}


def train_defaults():
    return load_yaml("train_default.yaml")


def load_claims_table():
    """The reference DW/SC twin pairs and their target reductions as a DataFrame."""
    claims = _reference()["claims"]
    table = pandas.DataFrame(claims["pairs"], columns=["label", "dw", "sc", "target_pct"])
    table.attrs["tolerance_pct"] = float(claims["tolerance_pct"])
    return table
