"""FACT federated domain-adaptation simulator package."""
import logging
from typing import List, Optional

from .config import ConfigManager, fingerprint
from .config_models import ExperimentConfig, Variant
from .experiment import ExperimentRunner, ResultTable
from .rendering import ReportRenderer
from .templates import TemplateManager

logger = logging.getLogger(__name__)

SWEEP_AXES = {
    "rounds": "rounds",
    "clients": "clients_per_domain",
    "sources": "source_subset",
    "targets": "target_domain",
}


class FactExperiment:
    def __init__(self, config_path: str = "config.json", workers: Optional[int] = None,
                 template_dir: Optional[str] = None):
        """Load the experiment configuration and wire the runner and renderer."""
        self.config_manager = ConfigManager(config_path)
        self.config: ExperimentConfig = self.config_manager.config
        self.runner = ExperimentRunner(workers)
        self.renderer = ReportRenderer(TemplateManager(template_dir))

    def apply_overrides(self, seed: Optional[int] = None, repeats: Optional[int] = None,
                        variant: Optional[str] = None) -> ExperimentConfig:
        """Apply --seed / --repeats / --variant on top of the file's settings."""
        first = seed if seed is not None else self.config.seeds[0]
        updates = {"variant": variant}
        if repeats is not None:
            updates.update(seeds=list(range(first, first + repeats)), repeats=repeats)
        elif seed is not None:
            updates.update(seeds=[seed], repeats=1)
        self.config = self.config_manager.override(**updates)
        logger.info(f"Experiment {fingerprint(self.config)}: variant {self.config.variant.value}, "
                    f"seeds {self.config.seeds}")
        return self.config

    def run(self, out_dir: Optional[str] = None, baseline: bool = False) -> List[str]:
        """Run the configured variant (plus the source-only control) and write the report.

        Returns:
            list: Paths of the written report files
        """
        table = self.runner.run_experiment(self.config)
        if baseline and self.config.variant != Variant.SOURCE_ONLY:
            table.extend(self.runner.baseline_source_only(self.config))
        return self.renderer.emit_report(table, out_dir or self.config.output_directory)

    def sweep(self, axis: Optional[str] = None, out_dir: Optional[str] = None) -> List[str]:
        """Run one study sweep and write the report."""
        resolved = SWEEP_AXES.get(axis, axis) if axis is not None else None
        table = self.runner.run_sweep(self.config, resolved)
        return self.renderer.emit_report(table, out_dir or self.config.output_directory)


def render_results(results_path: str, out_dir: str, template_dir: Optional[str] = None) -> List[str]:
    """Report from a results.csv without loading an experiment config."""
    renderer = ReportRenderer(TemplateManager(template_dir))
    return renderer.emit_report(ResultTable.from_csv(results_path), out_dir, timings=False)


__all__ = ["FactExperiment", "ConfigManager", "ExperimentConfig", "ExperimentRunner", "ResultTable",
           "ReportRenderer", "TemplateManager", "Variant", "fingerprint", "render_results", "SWEEP_AXES"]
