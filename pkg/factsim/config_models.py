"""Pydantic models for experiment configuration."""
import logging
from enum import Enum
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Variant(str, Enum):
    """Training scheme run by the federation."""
    FACT = "fact"
    FACT_NF = "fact-nf"
    SOURCE_ONLY = "source-only"


class HyperParams(BaseModel):
    """Optimizer settings shared by every client."""
    eta0: float = Field(default=0.005, gt=0)
    batch_size: int = Field(default=128, ge=1)
    total_epochs: int = Field(default=120, ge=1)  # per-stage budget that round sweeps spread over rounds
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=5e-4, ge=0)

    model_config = ConfigDict(extra="forbid")


class ProtocolConfig(BaseModel):
    """Round structure of the federated protocol."""
    rounds: int = Field(default=30, ge=1)
    epochs_src: int = Field(default=1, ge=1)
    epochs_ft: int = Field(default=1, ge=1)
    epochs_idd: int = Field(default=1, ge=1)
    round_epochs: Optional[List[PositiveInt]] = None
    variant: Variant = Variant.FACT
    rng_seed: int = 0
    weight_by_samples: bool = False

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_round_epochs(self):
        if self.round_epochs is not None and len(self.round_epochs) != self.rounds:
            raise ValueError(f"round_epochs has {len(self.round_epochs)} entries for {self.rounds} rounds")
        return self

    def stage_epochs(self, round_index: int) -> Tuple[int, int, int]:
        """(source, fine-tune, IDD) epochs of a 0-based round, after variant rules."""
        if self.round_epochs is not None:
            e = self.round_epochs[round_index]
            src, ft, idd = e, e, e
        else:
            src, ft, idd = self.epochs_src, self.epochs_ft, self.epochs_idd
        if self.variant == Variant.FACT_NF:
            ft = 0
        if self.variant == Variant.SOURCE_ONLY:
            idd = 0
        return src, ft, idd

    def source_epochs(self) -> int:
        """Source-training epochs over the whole run, the budget hyper.total_epochs describes."""
        if self.round_epochs is not None:
            return sum(self.round_epochs)
        return self.rounds * self.epochs_src

    def planned_epochs(self) -> int:
        """Scheduler horizon: sum of all stage epochs over every round."""
        return sum(sum(self.stage_epochs(r)) for r in range(self.rounds))


class BaseTask(BaseModel):
    """Gaussian classes with means evenly spaced on a circle."""
    dim: int = Field(default=2, ge=2)
    num_classes: int = Field(default=3, ge=2)
    radius: float = Field(default=1.0, gt=0)
    start_angle_deg: float = 90.0
    class_sigma: float = Field(default=0.35, ge=0)

    model_config = ConfigDict(extra="forbid")

    def class_means(self) -> np.ndarray:
        angles = np.deg2rad(self.start_angle_deg + 360.0 * np.arange(self.num_classes) / self.num_classes)
        means = np.zeros((self.num_classes, self.dim))
        means[:, 0] = self.radius * np.cos(angles)
        means[:, 1] = self.radius * np.sin(angles)
        return means


class AffineTransform(BaseModel):
    """x' = R(rotation) . diag(scale) . x + translation, then a column permutation."""
    rotation_deg: float = 0.0
    scale: Optional[List[float]] = None
    translation: Optional[List[float]] = None
    permutation: Optional[List[int]] = None

    model_config = ConfigDict(extra="forbid")


class DomainSpec(BaseModel):
    """Synthetic domain: a shared base task seen through an affine shift."""
    kind: Literal["synthetic"] = "synthetic"
    name: str
    base_task: BaseTask = BaseTask()
    transform: AffineTransform = AffineTransform()
    noise_sigma: float = Field(default=0.0, ge=0)
    n_samples: int = Field(default=1200, ge=1)
    seed: int = 0
    standardize: bool = False

    model_config = ConfigDict(extra="forbid")


class IdxDomain(BaseModel):
    """Domain read from IDX image/label files."""
    kind: Literal["idx"]
    name: str
    train_images: str
    train_labels: str
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    num_classes: Optional[int] = Field(default=None, ge=2)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def test_pair(self):
        if (self.test_images is None) != (self.test_labels is None):
            raise ValueError("test_images and test_labels must be given together")
        return self


DomainConfig = Annotated[Union[DomainSpec, IdxDomain], Field(discriminator="kind")]


class ArchitectureConfig(BaseModel):
    """Widths of the generator's hidden layers and the head's dropout rate."""
    hidden: List[PositiveInt] = [64, 32]
    dropout: float = Field(default=0.0, ge=0, lt=1)

    model_config = ConfigDict(extra="forbid")

    @field_validator("hidden")
    @classmethod
    def at_least_one_layer(cls, v):
        if not v:
            raise ValueError("the generator needs at least one hidden layer")
        return v


class SweepConfig(BaseModel):
    """One swept axis; values default to every admissible point when omitted."""
    axis: Literal["rounds", "clients_per_domain", "source_subset", "target_domain"]
    values: Optional[List[Union[int, str, List[str]]]] = None
    min_subset_size: int = Field(default=1, ge=1)

    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(BaseModel):
    """Main experiment configuration."""
    schema_version: Literal[1]
    domains: List[DomainConfig]
    target_domain: str
    variant: Variant = Variant.FACT
    protocol: ProtocolConfig = ProtocolConfig()
    hyper: HyperParams = HyperParams()
    architecture: ArchitectureConfig = ArchitectureConfig()
    clients_per_domain: int = Field(default=1, ge=1)
    test_fraction: float = Field(default=0.5, gt=0, lt=1)
    repeats: int = Field(default=1, ge=1)
    seeds: List[int] = [0]
    sweep: Optional[SweepConfig] = None
    output_directory: str = "./results"

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_domains(self):
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValueError(f"domain names must be unique, got {names}")
        if names.count(self.target_domain) != 1:
            raise ValueError(f"target_domain '{self.target_domain}' must name exactly one of {names}")
        if len(names) < 2:
            raise ValueError("at least one source domain besides the target is required")
        return self

    @model_validator(mode="after")
    def check_seeds(self):
        if self.repeats != len(self.seeds):
            raise ValueError(f"repeats ({self.repeats}) must equal the number of seeds ({len(self.seeds)})")
        return self

    @model_validator(mode="after")
    def check_epoch_budget(self):
        """total_epochs only drives round sweeps; a run planning another budget is flagged."""
        planned = self.protocol.source_epochs()
        if planned != self.hyper.total_epochs:
            logger.warning(f"hyper.total_epochs is {self.hyper.total_epochs} but the protocol plans {planned} "
                           f"epochs per stage; total_epochs only applies to round sweeps")
        return self

    @model_validator(mode="after")
    def sync_variant(self):
        """The top-level variant wins over protocol.variant."""
        if self.protocol.variant != self.variant:
            logger.debug(f"Overriding protocol variant {self.protocol.variant.value} with {self.variant.value}")
            self.protocol = self.protocol.model_copy(update={"variant": self.variant})
        return self

    @property
    def source_domains(self) -> List[str]:
        return [d.name for d in self.domains if d.name != self.target_domain]

    def domain(self, name: str):
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)
