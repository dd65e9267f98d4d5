from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .config import HarnessConfig, Settings, load_harness_config, load_settings, maybe_load_dotenv
from .models import CasePreset, CoefficientSet, PlantConfig


@dataclass(frozen=True)
class Bench:
    """Everything a study needs: settings, harness knobs and the working coefficient set."""

    settings: Settings
    harness: HarnessConfig
    coefficients: CoefficientSet
    coefficients_path: Path

    def plant_config(self, **overrides: Any) -> PlantConfig:
        return self.harness.plant_config(self.coefficients, **overrides)

    def preset(self, case: str) -> CasePreset:
        from utils.presets_io import load_preset

        return load_preset(case, self.settings.data_dir)

    def attribution(self, **extra: Any) -> dict:
        return {**extra, "coefficients": self.coefficients_path.name, "checksum": self.coefficients.checksum}


def create_bench(settings: Optional[Settings] = None, harness: Optional[HarnessConfig] = None) -> Bench:
    if settings is None:
        maybe_load_dotenv()
        settings = load_settings()
    if harness is None:
        harness = load_harness_config(settings.harness_config)

    # imported lazily to avoid an import cycle with utils
    from utils.coefficients_io import load_coefficients

    coefficients = load_coefficients(settings.coefficients)
    return Bench(settings=settings, harness=harness, coefficients=coefficients, coefficients_path=settings.coefficients)


__all__ = ["Bench", "create_bench"]
