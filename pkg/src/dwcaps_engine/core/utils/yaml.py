import yaml

from dwcaps_engine.core.utils.errors import FormatError


def read_yaml(path):
    """
    Read a YAML file and return its content as a dictionary (empty file gives {}).
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise FileNotFoundError(f"YAML file not found: {path}")
    except yaml.YAMLError as e:
        raise FormatError(f"Error parsing YAML file '{path}': {e}")


def write_yaml(path, data):
    """
    Write a dictionary to a YAML file, keys in insertion order.
    """
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, sort_keys=False, allow_unicode=True)


def dump_canonical(data):
    """Sorted-key YAML text; equal dictionaries always give equal bytes."""
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False, allow_unicode=True)
