"""Experiment harness: seeded runs, baselines, study sweeps and result tables."""
import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import fingerprint
from .config_models import DomainSpec, ExperimentConfig, Variant
from .data import Dataset, load_idx, make_domain, split_domain, train_test_split
from .federation import ClientState, FactServer, Role, RoundRecord, evaluate
from .nn import ArchitectureSpec, ModelParams
from .utils import ConfigurationError, FormatError, child_seeds, make_rng, resolve_workers, stage

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["fingerprint", "seed", "variant", "sweep_axis", "sweep_value",
                  "target_accuracy", "best_idd", "selected_round"]
SUMMARY_COLUMNS = ["fingerprint", "variant", "sweep_axis", "sweep_value", "runs",
                   "mean_accuracy", "std_accuracy", "mean_best_idd"]
DEFAULT_SPLIT_FACTORS = [1, 3, 5, 10]
DEFAULT_ROUND_COUNTS = [6, 30, 60]


class ResultRow(BaseModel):
    """Outcome of one (config, seed) run."""
    fingerprint: str
    seed: int
    variant: Variant
    sweep_axis: str = ""
    sweep_value: str = ""
    target_accuracy: float = Field(ge=0, le=1)
    best_idd: Optional[float] = None
    selected_round: int = Field(ge=1)
    wall_time: float = 0.0

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def key(self) -> Tuple[str, int]:
        return self.fingerprint, self.seed


class SummaryRow(BaseModel):
    fingerprint: str
    variant: Variant
    sweep_axis: str
    sweep_value: str
    runs: int
    mean_accuracy: float
    std_accuracy: float
    mean_best_idd: Optional[float] = None

    model_config = ConfigDict(extra="forbid", frozen=True)


class RunOutcome(NamedTuple):
    row: ResultRow
    history: List[RoundRecord]
    params: ModelParams


def _float_cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


class ResultTable:
    """Rows of finished runs, with each run's round history and selected model."""

    def __init__(self, rows: Optional[Sequence[ResultRow]] = None,
                 histories: Optional[Dict[Tuple[str, int], List[RoundRecord]]] = None,
                 snapshots: Optional[Dict[Tuple[str, int], ModelParams]] = None):
        self.rows: List[ResultRow] = list(rows or [])
        self.histories = dict(histories or {})
        self.snapshots = dict(snapshots or {})

    def __len__(self):
        return len(self.rows)

    def add(self, outcome: RunOutcome) -> None:
        self.rows.append(outcome.row)
        self.histories[outcome.row.key] = outcome.history
        self.snapshots[outcome.row.key] = outcome.params

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        self.histories.update(other.histories)
        self.snapshots.update(other.snapshots)

    def summary(self) -> List[SummaryRow]:
        """Mean and population std (ddof=0) of target accuracy per config and sweep point."""
        groups: Dict[Tuple[str, Variant, str, str], List[ResultRow]] = {}
        for row in self.rows:
            groups.setdefault((row.fingerprint, row.variant, row.sweep_axis, row.sweep_value), []).append(row)
        summary = []
        for (fp, variant, axis, value), rows in groups.items():
            accuracies = np.array([r.target_accuracy for r in rows])
            idds = [r.best_idd for r in rows if r.best_idd is not None]
            summary.append(SummaryRow(
                fingerprint=fp, variant=variant, sweep_axis=axis, sweep_value=value, runs=len(rows),
                mean_accuracy=float(np.mean(accuracies)), std_accuracy=float(np.std(accuracies)),
                mean_best_idd=float(np.mean(idds)) if idds else None))
        return summary

    def to_csv(self, path: str) -> None:
        """Write every row without wall time, so the file is reproducible bit for bit."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(RESULT_COLUMNS)
            for r in self.rows:
                writer.writerow([r.fingerprint, r.seed, r.variant.value, r.sweep_axis, r.sweep_value,
                                 _float_cell(r.target_accuracy), _float_cell(r.best_idd), r.selected_round])

    def timings_to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["fingerprint", "seed", "sweep_value", "wall_time"])
            for r in self.rows:
                writer.writerow([r.fingerprint, r.seed, r.sweep_value, _float_cell(r.wall_time)])

    def summary_to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(SUMMARY_COLUMNS)
            for s in self.summary():
                writer.writerow([s.fingerprint, s.variant.value, s.sweep_axis, s.sweep_value, s.runs,
                                 _float_cell(s.mean_accuracy), _float_cell(s.std_accuracy),
                                 _float_cell(s.mean_best_idd)])

    @classmethod
    def from_csv(cls, path: str) -> "ResultTable":
        """Read a results.csv written by to_csv."""
        rows = []
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != RESULT_COLUMNS:
                raise FormatError(f"{path}: expected columns {RESULT_COLUMNS}, got {header}")
            for line_no, cells in enumerate(reader, start=2):
                if len(cells) != len(RESULT_COLUMNS):
                    raise FormatError(f"{path}:{line_no}: expected {len(RESULT_COLUMNS)} cells, got {len(cells)}")
                record: Dict[str, Any] = dict(zip(RESULT_COLUMNS, cells))
                record["best_idd"] = record["best_idd"] or None
                try:
                    rows.append(ResultRow.model_validate(record))
                except ValidationError as e:
                    raise FormatError(f"{path}:{line_no}: {e}") from e
        return cls(rows)


def with_updates(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    """Copy of cfg with top-level fields replaced, validated again."""
    merged = cfg.model_dump(mode="json")
    merged.update(updates)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid derived configuration: {e}") from e


def split_epochs(total: int, rounds: int) -> List[int]:
    """Epochs per round for a fixed budget; the final round takes the remainder."""
    if rounds < 1:
        raise ConfigurationError(f"rounds must be >= 1, got {rounds}")
    if rounds > total:
        raise ConfigurationError(f"cannot spread {total} epochs over {rounds} rounds")
    base = total // rounds
    return [base] * (rounds - 1) + [base + total % rounds]


def _load_domain(domain, test_fraction: float, rng: np.random.Generator) -> Tuple[Dataset, Dataset]:
    if isinstance(domain, DomainSpec):
        return train_test_split(make_domain(domain), test_fraction, rng)
    train = load_idx(domain.train_images, domain.train_labels, domain.num_classes, domain.name)
    if domain.test_images is None:
        return train_test_split(train, test_fraction, rng)
    test = load_idx(domain.test_images, domain.test_labels, train.num_classes, domain.name)
    return train, test


def build_clients(cfg: ExperimentConfig, seed: int) -> Tuple[List[ClientState], Dataset, ArchitectureSpec]:
    """Source clients, the unlabeled target client, the target test split and the network spec."""
    split_seed, _ = child_seeds(make_rng(seed), 2)
    rng = make_rng(split_seed)
    splits = {d.name: _load_domain(d, cfg.test_fraction, rng) for d in cfg.domains}

    shapes = {(train.dim, train.num_classes) for train, _ in splits.values()}
    if len(shapes) != 1:
        raise ConfigurationError(f"domains disagree on (features, classes): {sorted(shapes)}")
    dim, num_classes = shapes.pop()
    spec = ArchitectureSpec.reference(dim, num_classes, cfg.architecture.hidden, cfg.architecture.dropout)

    sources = cfg.source_domains
    shards_per_domain = cfg.clients_per_domain
    if len(sources) == 1 and shards_per_domain == 1:
        logger.warning(f"Only one source domain ('{sources[0]}'); splitting it into two source clients")
        shards_per_domain = 2

    clients = []
    for name in sources:
        shards = split_domain(splits[name][0], shards_per_domain, rng)
        for i, shard in enumerate(shards):
            client_id = name if len(shards) == 1 else f"{name}#{i + 1}"
            clients.append(ClientState(client_id, Role.SOURCE, shard, domain_tag=name))
    target_train, target_test = splits[cfg.target_domain]
    clients.append(ClientState(cfg.target_domain, Role.TARGET, target_train.unlabeled()))
    logger.debug(f"Built {len(clients) - 1} source clients and target '{cfg.target_domain}' for seed {seed}")
    return clients, target_test, spec


def run_single(cfg: ExperimentConfig, seed: int, sweep_axis: str = "", sweep_value: str = "",
               client_workers: int = 1) -> RunOutcome:
    """One seeded run: build clients, run the protocol, evaluate the selected model."""
    started = time.time()
    with stage("build_clients", seed):
        clients, eval_data, spec = build_clients(cfg, seed)
    _, protocol_seed = child_seeds(make_rng(seed), 2)
    protocol = cfg.protocol.model_copy(update={"rng_seed": protocol_seed})
    with stage("run_protocol", seed):
        server = FactServer(spec, protocol, cfg.hyper, clients, workers=client_workers, eval_data=eval_data)
        params, history = server.run_protocol()
    with stage("evaluate", seed):
        accuracy = evaluate(params, eval_data)
    best = server.state.best_snapshot
    row = ResultRow(fingerprint=fingerprint(cfg), seed=seed, variant=cfg.variant, sweep_axis=sweep_axis,
                    sweep_value=sweep_value, target_accuracy=accuracy, best_idd=best.idd,
                    selected_round=best.round, wall_time=time.time() - started)
    logger.info(f"Run {row.fingerprint} seed={seed} {cfg.variant.value}: accuracy {accuracy:.4f} "
                f"(round {best.round})")
    return RunOutcome(row, history, params)


class Job(NamedTuple):
    cfg: ExperimentConfig
    seed: int
    sweep_axis: str = ""
    sweep_value: str = ""


def _run_job(job: Job) -> RunOutcome:
    return run_single(job.cfg, job.seed, job.sweep_axis, job.sweep_value)


class ExperimentRunner:
    """Runs experiments and sweeps described by an ExperimentConfig."""

    def __init__(self, workers: Optional[int] = None):
        self.workers = resolve_workers() if workers is None else max(1, workers)

    def _run_jobs(self, jobs: Sequence[Job]) -> ResultTable:
        table = ResultTable()
        if self.workers > 1 and len(jobs) > 1:
            logger.info(f"Running {len(jobs)} jobs on {self.workers} worker processes")
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(_run_job, jobs))
        else:
            outcomes = [_run_job(job) for job in jobs]
        for outcome in outcomes:
            table.add(outcome)
        return table

    def _jobs(self, cfg: ExperimentConfig, axis: str = "", value: str = "") -> List[Job]:
        return [Job(cfg, seed, axis, value) for seed in cfg.seeds]

    def run_experiment(self, cfg: ExperimentConfig) -> ResultTable:
        """Run the configured variant once per seed."""
        logger.info(f"Running {cfg.variant.value} on target '{cfg.target_domain}' with {cfg.repeats} seeds")
        return self._run_jobs(self._jobs(cfg))

    def baseline_source_only(self, cfg: ExperimentConfig) -> ResultTable:
        """Same pipeline without IDD minimization; the final round is selected."""
        return self.run_experiment(with_updates(cfg, variant=Variant.SOURCE_ONLY.value))

    def sweep_sources(self, cfg: ExperimentConfig) -> ResultTable:
        """Every combination of source domains, each run against the same target."""
        subsets = self.source_subsets(cfg)
        jobs = []
        for subset in subsets:
            kept = set(subset) | {cfg.target_domain}
            domains = [d.model_dump(mode="json") for d in cfg.domains if d.name in kept]
            jobs.extend(self._jobs(with_updates(cfg, domains=domains, sweep=None), "source_subset", "+".join(subset)))
        logger.info(f"Sweeping {len(subsets)} source combinations")
        return self._run_jobs(jobs)

    def source_subsets(self, cfg: ExperimentConfig) -> List[Tuple[str, ...]]:
        sources = cfg.source_domains
        if cfg.sweep is not None and cfg.sweep.axis == "source_subset" and cfg.sweep.values:
            subsets = []
            for value in cfg.sweep.values:
                subset = tuple(value) if isinstance(value, list) else tuple(str(value).split("+"))
                unknown = set(subset) - set(sources)
                if unknown or not subset:
                    raise ConfigurationError(f"source subset {list(subset)} names unknown sources {sorted(unknown)}")
                subsets.append(subset)
            return subsets
        min_size = cfg.sweep.min_subset_size if cfg.sweep is not None else 1
        return [subset for size in range(min_size, len(sources) + 1)
                for subset in itertools.combinations(sources, size)]

    def sweep_rounds(self, cfg: ExperimentConfig) -> ResultTable:
        """Vary the round count while the total epoch budget stays fixed."""
        total = cfg.hyper.total_epochs
        counts = self._sweep_values(cfg, "rounds", [r for r in DEFAULT_ROUND_COUNTS if r <= total])
        jobs = []
        for rounds in counts:
            protocol = cfg.protocol.model_dump(mode="json")
            protocol.update(rounds=int(rounds), round_epochs=split_epochs(total, int(rounds)))
            jobs.extend(self._jobs(with_updates(cfg, protocol=protocol, sweep=None), "rounds", str(rounds)))
        return self._run_jobs(jobs)

    def sweep_client_splits(self, cfg: ExperimentConfig) -> ResultTable:
        """Split every source domain across more clients, keeping the total sample count."""
        factors = self._sweep_values(cfg, "clients_per_domain", DEFAULT_SPLIT_FACTORS)
        jobs = []
        for factor in factors:
            derived = with_updates(cfg, clients_per_domain=int(factor), sweep=None)
            jobs.extend(self._jobs(derived, "clients_per_domain", str(factor)))
        return self._run_jobs(jobs)

    def sweep_targets(self, cfg: ExperimentConfig) -> ResultTable:
        """Leave one domain out as target, adapting from all others."""
        names = self._sweep_values(cfg, "target_domain", [d.name for d in cfg.domains])
        jobs = []
        for name in names:
            jobs.extend(self._jobs(with_updates(cfg, target_domain=str(name), sweep=None), "target_domain", str(name)))
        return self._run_jobs(jobs)

    def _sweep_values(self, cfg: ExperimentConfig, axis: str, default: List[Any]) -> List[Any]:
        if cfg.sweep is not None and cfg.sweep.axis == axis and cfg.sweep.values:
            return list(cfg.sweep.values)
        if not default:
            raise ConfigurationError(f"no values to sweep on axis '{axis}'")
        return default

    def run_sweep(self, cfg: ExperimentConfig, axis: Optional[str] = None) -> ResultTable:
        """Dispatch on the sweep axis (argument first, then config)."""
        axis = axis or (cfg.sweep.axis if cfg.sweep is not None else None)
        sweeps = {
            "rounds": self.sweep_rounds,
            "clients_per_domain": self.sweep_client_splits,
            "source_subset": self.sweep_sources,
            "target_domain": self.sweep_targets,
        }
        if axis not in sweeps:
            raise ConfigurationError(f"unknown sweep axis {axis!r}; choose one of {sorted(sweeps)}")
        return sweeps[axis](cfg)
