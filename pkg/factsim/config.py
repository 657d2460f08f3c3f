"""Configuration management for the FACT simulator."""
import hashlib
import json
import logging
import os
from typing import Any, Dict

from pydantic import ValidationError

from .config_models import SCHEMA_VERSION, ExperimentConfig
from .utils import ConfigurationError

logger = logging.getLogger(__name__)


def default_config_dict() -> Dict[str, Any]:
    """Desk-scale default: three rotated sources, a target rotated by 60 degrees."""
    def domain(name, rotation, seed):
        return {"kind": "synthetic", "name": name, "transform": {"rotation_deg": rotation},
                "n_samples": 1200, "seed": seed}

    return {
        "schema_version": SCHEMA_VERSION,
        "domains": [
            domain("rot0", 0.0, 11),
            domain("rot20", 20.0, 12),
            domain("rot340", 340.0, 13),
            domain("rot60", 60.0, 14),
        ],
        "target_domain": "rot60",
        "variant": "fact",
        "protocol": {"rounds": 30, "epochs_src": 4, "epochs_ft": 4, "epochs_idd": 4},
        "hyper": {"eta0": 0.005, "batch_size": 128, "total_epochs": 120,
                  "momentum": 0.9, "weight_decay": 5e-4},
        "architecture": {"hidden": [64, 32], "dropout": 0.0},
        "clients_per_domain": 1,
        "test_fraction": 0.5,
        "repeats": 10,
        "seeds": list(range(10)),
        "output_directory": "./results",
    }


def fingerprint(config: ExperimentConfig) -> str:
    """Stable short hash of a config, ignoring seeds, repeats and output location."""
    payload = config.model_dump(mode="json", exclude={"seeds", "repeats", "output_directory"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


class ConfigManager:
    def __init__(self, config_path: str = "config.json"):
        """Initialize configuration manager."""
        self.config_path = config_path
        self._raw_config = self._load_config_file()
        self.config = self._parse_config()

    def _load_config_file(self) -> Dict[str, Any]:
        """Load configuration from JSON file."""
        try:
            with open(self.config_path, 'r') as f:
                return json.load(f)
        except FileNotFoundError:
            logger.info(f"Config file not found at {self.config_path}, creating default config")
            default_config = default_config_dict()
            os.makedirs(os.path.dirname(self.config_path) or '.', exist_ok=True)
            with open(self.config_path, 'w') as f:
                json.dump(default_config, f, indent=4)
            return default_config
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {self.config_path} is not valid JSON: {e}") from e

    def _parse_config(self) -> ExperimentConfig:
        """Parse raw config into validated Pydantic model."""
        try:
            return ExperimentConfig.model_validate(self._raw_config)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid configuration in {self.config_path}: {e}") from e

    def save_config(self) -> None:
        """Save current configuration back to file."""
        config_dict = self.config.model_dump(mode='json')
        with open(self.config_path, 'w') as f:
            json.dump(config_dict, f, indent=4)
        logger.info(f"Configuration saved to {self.config_path}")

    def override(self, **updates) -> ExperimentConfig:
        """Re-validate the config with top-level fields replaced (CLI flags)."""
        merged = self.config.model_dump(mode='json')
        merged.update({k: v for k, v in updates.items() if v is not None})
        try:
            self.config = ExperimentConfig.model_validate(merged)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid configuration override {updates}: {e}") from e
        return self.config
