import logging
from pathlib import Path

from dwcaps_engine.core.utils.errors import UsageError
from dwcaps_engine.core.utils.yaml import read_yaml, write_yaml
from dwcaps_engine.specifications.specification_manager import train_defaults

logger = logging.getLogger(__name__)


class SetupManager:
    """Handles creation and validation of the YAML training configuration."""

    def __init__(self, config_path=None):
        self.config_path = None if config_path is None else Path(config_path)

    def ensure_configuration(self):
        """Training settings: defaults overlaid with the user file, written as a vanilla copy when missing."""
        values = train_defaults()
        if self.config_path is None:
            return values
        if not self.config_path.exists():
            logger.warning("Missing training configuration file %s.", self.config_path)
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            write_yaml(self.config_path, values)
            logger.warning(
                "Vanilla training configuration file automatically generated in %s and used instead. "
                "Please, open and modify as wanted.", self.config_path
            )
            return values
        user = read_yaml(self.config_path)
        if not isinstance(user, dict):
            raise UsageError(f"{self.config_path} must hold a mapping of training settings.")
        unknown = sorted(set(user) - set(values))
        if unknown:
            raise UsageError(f"Unknown training settings in {self.config_path}: {unknown}.")
        values.update(user)
        return values

    def train_config(self, **overrides):
        from dwcaps_engine.run_model import TrainConfig

        values = self.ensure_configuration()
        values.update({k: v for k, v in overrides.items() if v is not None})
        values["capsules"] = dict(values.get("capsules") or {})
        return TrainConfig(**values)
