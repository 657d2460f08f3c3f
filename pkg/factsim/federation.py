"""Server and client state machine of the FACT protocol."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config_models import HyperParams, ProtocolConfig, Variant
from .data import Dataset
from .nn import PARTITIONS, SGD, ArchitectureSpec, GradientTarget, ModelParams, forward, lr_schedule, value_and_grad
from .utils import ConfigurationError, DimensionError, InputError, NumericalError, ProtocolError, child_seeds, make_rng

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9
SEEDS_PER_ROUND = 5  # two source trainings, two fine-tunings, one IDD minimization


class Role(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class ClientState:
    """A federation participant holding one client's data and local model."""

    def __init__(self, client_id: str, role: Role, dataset: Dataset,
                 local_params: Optional[ModelParams] = None, domain_tag: Optional[str] = None):
        role = Role(role)
        if role == Role.SOURCE and not dataset.labeled:
            raise ConfigurationError(f"source client '{client_id}' needs labeled data")
        if role == Role.TARGET and dataset.labeled:
            raise ConfigurationError(f"target client '{client_id}' must not carry labels")
        self.id = client_id
        self.role = role
        self.dataset = dataset
        self.local_params = local_params
        self.domain_tag = domain_tag if domain_tag is not None else dataset.domain_tag

    def __repr__(self):
        return f"ClientState('{self.id}', {self.role.value}, n={len(self.dataset)})"


class RoundRecord(BaseModel):
    """Outcome of one federated round."""
    round: int = Field(ge=1)
    pair: Tuple[str, str]
    source_losses: Tuple[float, float]
    finetune_losses: Optional[Tuple[float, float]] = None
    idd: Optional[float] = Field(default=None, ge=0)
    target_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    head_accuracies: Optional[Tuple[float, float]] = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def distinct_pair(self):
        if self.pair[0] == self.pair[1]:
            raise ValueError(f"pair ids must differ, got {self.pair}")
        return self


class Snapshot(NamedTuple):
    params: ModelParams
    idd: Optional[float]
    round: int


class ServerState:
    """Global model, completed-round counter, history and the min-IDD snapshot."""

    def __init__(self, global_params: ModelParams, rng: np.random.Generator):
        self.global_params = global_params
        self.rng = rng
        self.round = 0
        self.epochs_done = 0
        self.history: List[RoundRecord] = []
        self.best_snapshot: Optional[Snapshot] = None


class ProgressWindow(NamedTuple):
    """Position of a training stage on the global learning-rate schedule."""
    start: int  # epochs already elapsed when the stage begins
    total: int  # planned epochs of the whole run

    def progress(self, epoch: int, batch: int, num_batches: int) -> float:
        return min(1.0, (self.start + epoch + batch / num_batches) / self.total)

    def shifted(self, epochs: int) -> "ProgressWindow":
        return ProgressWindow(self.start + epochs, self.total)


def _train(params: ModelParams, features: np.ndarray, labels: Optional[np.ndarray], target: GradientTarget,
           hyper: HyperParams, epochs: int, window: ProgressWindow, rng: np.random.Generator,
           second_head: Optional[Sequence[np.ndarray]] = None,
           on_epoch: Optional[Callable[[int, float], None]] = None) -> Tuple[ModelParams, List[float]]:
    """Mini-batch SGD over the selected partitions; returns params and per-epoch mean losses."""
    if epochs < 1:
        raise ConfigurationError(f"a training stage needs at least one epoch, got {epochs}")
    n = features.shape[0]
    if n == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    partitions = [p for p in PARTITIONS if p in target.partitions]
    optimizer = SGD(momentum=hyper.momentum, weight_decay=hyper.weight_decay)
    num_batches = math.ceil(n / hyper.batch_size)
    epoch_losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for b in range(num_batches):
            idx = order[b * hyper.batch_size:(b + 1) * hyper.batch_size]
            rate = lr_schedule(hyper.eta0, window.progress(epoch, b, num_batches))
            loss, grads = value_and_grad(params, features[idx], target,
                                         labels=None if labels is None else labels[idx],
                                         second_head=second_head, mode="train", rng=rng)
            if not np.isfinite(loss):
                raise NumericalError(f"{target.loss} loss became non-finite in epoch {epoch + 1}")
            params = optimizer.step(params, grads, rate, partitions)
            total_loss += loss * len(idx)
        mean_loss = total_loss / n
        epoch_losses.append(mean_loss)
        logger.debug(f"{target.loss} epoch {epoch + 1}/{epochs}: mean loss {mean_loss:.6f}")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params, epoch_losses


def select_pair(server: ServerState, sources: Sequence[ClientState],
                rng: Optional[np.random.Generator] = None) -> Tuple[str, str]:
    """Draw two distinct source clients, uniform over unordered pairs."""
    if len(sources) < 2:
        raise ConfigurationError(
            f"FACT needs at least 2 source clients, got {len(sources)}; "
            "split a single source domain with split_domain")
    rng = server.rng if rng is None else rng
    i, j = sorted(int(k) for k in rng.choice(len(sources), size=2, replace=False))
    return sources[i].id, sources[j].id


def cross_initialize(server: ServerState, pair: Tuple[str, str],
                     clients_by_id: Dict[str, ClientState]) -> None:
    """Overwrite both selected clients' local models with the global model."""
    if pair[0] == pair[1]:
        raise ProtocolError(f"pair must name two distinct clients, got {pair}")
    for client_id in pair:
        client = clients_by_id.get(client_id)
        if client is None or client.role != Role.SOURCE:
            raise ProtocolError(f"'{client_id}' is not a source client of this federation")
        if client.local_params is not None:
            client.local_params.check_compatible(server.global_params)
    for client_id in pair:
        clients_by_id[client_id].local_params = server.global_params.copy()


def source_train(client: ClientState, hyper: HyperParams, epochs: int, window: ProgressWindow,
                 rng: Optional[np.random.Generator] = None,
                 on_epoch: Optional[Callable[[int, float], None]] = None) -> float:
    """Train G and F of a source client on cross-entropy; returns the final epoch's mean loss."""
    if client.role != Role.SOURCE:
        raise ProtocolError(f"source training on {client.role.value} client '{client.id}'")
    if client.local_params is None:
        raise ProtocolError(f"client '{client.id}' has not been initialized")
    rng = make_rng(0) if rng is None else rng
    target = GradientTarget(loss="cross_entropy")
    params, losses = _train(client.local_params, client.dataset.features, client.dataset.labels, target,
                            hyper, epochs, window, rng, on_epoch=on_epoch)
    client.local_params = params
    return losses[-1]


def fedavg(parts: Sequence[Sequence[np.ndarray]], weights: Sequence[float]) -> List[np.ndarray]:
    """Element-wise convex combination of congruent parameter partitions."""
    if not parts or len(parts) != len(weights):
        raise InputError(f"fedavg needs one weight per partition, got {len(weights)} weights for {len(parts)}")
    weights = [float(w) for w in weights]
    if any(w < 0 or not np.isfinite(w) for w in weights):
        raise InputError(f"weights must be finite and non-negative, got {weights}")
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise InputError(f"weights must sum to 1, got {sum(weights)}")
    shapes = [tuple(np.shape(a) for a in part) for part in parts]
    if any(s != shapes[0] for s in shapes):
        raise DimensionError(f"partitions are not shape-congruent: {shapes}")

    averaged = []
    for arrays in zip(*parts):
        acc = weights[0] * np.asarray(arrays[0], dtype=np.float64)
        for w, a in zip(weights[1:], arrays[1:]):
            acc = acc + w * np.asarray(a, dtype=np.float64)
        averaged.append(acc)
    return averaged


def fine_tune(client: ClientState, frozen_generator: Sequence[np.ndarray], hyper: HyperParams,
              epochs: int, window: ProgressWindow, rng: Optional[np.random.Generator] = None,
              variant: Variant = Variant.FACT,
              on_epoch: Optional[Callable[[int, float], None]] = None) -> Optional[float]:
    """Fit the client's head to the frozen aggregated generator.

    FACT-NF skips the step: the head passes through unchanged and None is
    returned.
    """
    if variant == Variant.FACT_NF:
        return None
    if client.role != Role.SOURCE:
        raise ProtocolError(f"fine-tuning on {client.role.value} client '{client.id}'")
    if client.local_params is None:
        raise ProtocolError(f"client '{client.id}' has not been initialized")
    rng = make_rng(0) if rng is None else rng
    params = client.local_params.replace(generator=frozen_generator)
    target = GradientTarget(loss="cross_entropy", partitions={"head"})
    params, losses = _train(params, client.dataset.features, client.dataset.labels, target,
                            hyper, epochs, window, rng, on_epoch=on_epoch)
    client.local_params = params
    return losses[-1]


def idd_minimize(target: ClientState, generator: Sequence[np.ndarray], head1: Sequence[np.ndarray],
                 head2: Sequence[np.ndarray], hyper: HyperParams, epochs: int, window: ProgressWindow,
                 rng: Optional[np.random.Generator] = None,
                 on_epoch: Optional[Callable[[int, float], None]] = None) -> Tuple[List[np.ndarray], float]:
    """Update the generator on unlabeled target data to shrink the discrepancy of two frozen heads.

    Returns the new generator and the IDD averaged over the final epoch.
    """
    if target.role != Role.TARGET:
        raise ProtocolError(f"IDD minimization on {target.role.value} client '{target.id}'")
    spec = _spec_of(target)
    rng = make_rng(0) if rng is None else rng
    params = ModelParams(spec, generator, head1)
    grad_target = GradientTarget(loss="idd", partitions={"generator"})
    params, losses = _train(params, target.dataset.features, None, grad_target, hyper, epochs, window, rng,
                            second_head=head2, on_epoch=on_epoch)
    return params.generator, losses[-1]


def _spec_of(client: ClientState) -> ArchitectureSpec:
    if client.local_params is None:
        raise ProtocolError(f"client '{client.id}' has not been initialized")
    return client.local_params.spec


def evaluate(params: ModelParams, dataset: Dataset) -> float:
    """Fraction of samples whose argmax class (smallest index on ties) matches the label."""
    if not dataset.labeled:
        raise InputError(f"evaluation needs labeled data, '{dataset.domain_tag}' has none")
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    _, probs = forward(params, dataset.features, mode="eval")
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


def select_min_idd(history: Sequence[RoundRecord]) -> RoundRecord:
    """Round with the smallest IDD, earliest on ties; the last round when none recorded an IDD."""
    if not history:
        raise InputError("history is empty")
    best = None
    for record in history:
        if record.idd is not None and (best is None or record.idd < best.idd):
            best = record
    return best if best is not None else history[-1]


class FactServer:
    """Runs FACT rounds over a fixed set of source clients and one target client."""

    def __init__(self, spec: ArchitectureSpec, protocol: ProtocolConfig, hyper: HyperParams,
                 clients: Sequence[ClientState], workers: int = 1,
                 eval_data: Optional[Dataset] = None, initial_params: Optional[ModelParams] = None):
        self.spec = spec
        self.protocol = protocol
        self.hyper = hyper
        self.workers = max(1, workers)
        self.eval_data = eval_data
        self.clients = list(clients)
        self.clients_by_id = {c.id: c for c in self.clients}
        if len(self.clients_by_id) != len(self.clients):
            raise ConfigurationError("client ids must be unique")
        self.sources = [c for c in self.clients if c.role == Role.SOURCE]
        targets = [c for c in self.clients if c.role == Role.TARGET]
        if len(targets) != 1:
            raise ConfigurationError(f"a federation needs exactly one target client, got {len(targets)}")
        if len(self.sources) < 2:
            raise ConfigurationError(
                f"FACT needs at least 2 source clients, got {len(self.sources)}; "
                "split a single source domain with split_domain")
        self.target = targets[0]

        rng = make_rng(protocol.rng_seed)
        params = ModelParams.initialize(spec, rng) if initial_params is None else initial_params
        if params.spec != spec:
            raise ProtocolError("initial parameters do not follow the federation's layer spec")
        for client in self.clients:
            if client.dataset.dim != spec.input_dim:
                raise ProtocolError(
                    f"client '{client.id}' has {client.dataset.dim} features, layer spec expects {spec.input_dim}")
            if client.local_params is not None:
                client.local_params.check_compatible(params)
        self.state = ServerState(params, rng)
        self.target.local_params = params

    def _pairwise(self, task: Callable[[ClientState, int], Optional[float]],
                  clients: Sequence[ClientState], seeds: Sequence[int]) -> List[Optional[float]]:
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=2) as pool:
                return list(pool.map(task, clients, seeds))
        return [task(c, s) for c, s in zip(clients, seeds)]

    def _weights(self, first: ClientState, second: ClientState) -> Tuple[float, float]:
        if not self.protocol.weight_by_samples:
            return 0.5, 0.5
        n1, n2 = len(first.dataset), len(second.dataset)
        return n1 / (n1 + n2), n2 / (n1 + n2)

    def run_round(self) -> RoundRecord:
        """Execute one round; on any failure the server and clients are restored and the error re-raised."""
        state = self.state
        saved = (state.global_params, state.round, state.epochs_done, len(state.history),
                 state.best_snapshot, state.rng.bit_generator.state,
                 {c.id: c.local_params for c in self.clients})
        try:
            return self._execute_round()
        except Exception as e:
            (state.global_params, state.round, state.epochs_done, history_len,
             state.best_snapshot, rng_state, local) = saved
            del state.history[history_len:]
            state.rng.bit_generator.state = rng_state
            for client in self.clients:
                client.local_params = local[client.id]
            logger.warning(f"Round {state.round + 1} aborted, server state restored: {e}")
            raise

    def _execute_round(self) -> RoundRecord:
        state = self.state
        hyper = self.hyper
        variant = self.protocol.variant
        e_src, e_ft, e_idd = self.protocol.stage_epochs(state.round)
        window = ProgressWindow(state.epochs_done, self.protocol.planned_epochs())

        # Step 0: sample and cross-initialize a pair of source clients
        pair = select_pair(state, self.sources, state.rng)
        seeds = child_seeds(state.rng, SEEDS_PER_ROUND)
        cross_initialize(state, pair, self.clients_by_id)
        first, second = self.clients_by_id[pair[0]], self.clients_by_id[pair[1]]

        # Step 1: source training, then aggregate the generators
        source_losses = self._pairwise(
            lambda c, s: source_train(c, hyper, e_src, window, make_rng(s)), (first, second), seeds[0:2])
        weights = self._weights(first, second)
        generator = fedavg([first.local_params.generator, second.local_params.generator], weights)

        # Step 2: fine-tune both heads on the frozen aggregated generator
        finetune_losses = None
        ft_window = window.shifted(e_src)
        if e_ft > 0:
            finetune_losses = self._pairwise(
                lambda c, s: fine_tune(c, generator, hyper, e_ft, ft_window, make_rng(s), variant),
                (first, second), seeds[2:4])
        head1, head2 = first.local_params.head, second.local_params.head

        # Step 3: IDD minimization on the target, then aggregate the heads
        idd = None
        target_generator = generator
        if e_idd > 0:
            target_generator, idd = idd_minimize(self.target, generator, head1, head2, hyper, e_idd,
                                                 ft_window.shifted(e_ft), make_rng(seeds[4]))
        head = fedavg([head1, head2], weights)

        state.global_params = ModelParams(self.spec, target_generator, head)
        self.target.local_params = state.global_params
        state.epochs_done += e_src + e_ft + e_idd
        state.round += 1

        target_accuracy = head_accuracies = None
        if self.eval_data is not None:
            target_accuracy = evaluate(state.global_params, self.eval_data)
            head_accuracies = (evaluate(ModelParams(self.spec, target_generator, head1), self.eval_data),
                               evaluate(ModelParams(self.spec, target_generator, head2), self.eval_data))

        record = RoundRecord(round=state.round, pair=pair, source_losses=tuple(source_losses),
                             finetune_losses=None if finetune_losses is None else tuple(finetune_losses),
                             idd=idd, target_accuracy=target_accuracy, head_accuracies=head_accuracies)
        state.history.append(record)
        self._update_snapshot(record)
        idd_text = "n/a" if idd is None else f"{idd:.6f}"
        logger.info(f"Round {state.round}/{self.protocol.rounds} ({variant.value}) pair={pair} IDD={idd_text}")
        return record

    def _update_snapshot(self, record: RoundRecord) -> None:
        best = self.state.best_snapshot
        if record.idd is None or best is None or best.idd is None or record.idd < best.idd:
            self.state.best_snapshot = Snapshot(self.state.global_params, record.idd, record.round)

    def run_protocol(self) -> Tuple[ModelParams, List[RoundRecord]]:
        """Run the remaining rounds; returns the min-IDD snapshot's params and the history."""
        while self.state.round < self.protocol.rounds:
            self.run_round()
        best = self.state.best_snapshot
        logger.info(f"Protocol finished after {self.state.round} rounds; selected round {best.round}")
        return best.params, list(self.state.history)


def run_protocol(clients: Sequence[ClientState], protocol: ProtocolConfig, hyper: HyperParams,
                 spec: ArchitectureSpec, workers: int = 1,
                 eval_data: Optional[Dataset] = None) -> Tuple[ModelParams, List[RoundRecord]]:
    return FactServer(spec, protocol, hyper, clients, workers=workers, eval_data=eval_data).run_protocol()
