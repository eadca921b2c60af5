"""Round-based federated training of the shared forecaster.

One communication round: the centre encodes the global parameter vector,
every selected client decodes it, trains locally, sanitizes (clip + noise)
and re-encodes its update, and the centre aggregates the decoded updates
as a sample-count-weighted mean. Round losses are the arithmetic mean of
the clients' local training MSEs. Training stops at the round cap or when
the round loss plateaus.

Determinism contract: every random choice is derived from
(master_seed, client_id, round) or a tagged variant, and aggregation sums
in ascending client id order, so results are bit-identical regardless of
thread count or client execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import WindowedDataset
from .kernels import fnv1a64
from .model import (
    ModelDims,
    ModelParams,
    TrainConfig,
    flatten,
    init_params,
    local_train,
    serialize_vector,
    unflatten,
)
from .privacy import Codec, DpConfig, decode, encode, perturb
from .rng import derive_seed

__all__ = [
    "ClientState",
    "ConvergenceConfig",
    "RoundConfig",
    "RoundReport",
    "TrainingRun",
    "GlobalState",
    "select_clients",
    "client_update",
    "aggregate",
    "run_round",
    "run_training",
    "train_centralized",
    "checksum_vector",
    "write_round_reports",
]


@dataclass(eq=False)
class ClientState:
    """One retailer's private windowed data and identity."""

    client_id: int
    train_data: WindowedDataset
    test_data: WindowedDataset | None = None
    n_samples: int = field(init=False)

    def __post_init__(self) -> None:
        if self.train_data.count < 1:
            raise ValueError(f"client {self.client_id} has no training samples")
        self.n_samples = self.train_data.count


@dataclass(frozen=True)
class ConvergenceConfig:
    """Plateau rule: stop after `patience` consecutive rounds whose loss
    improves on the best seen by less than `min_rel_improvement`
    (relatively). patience = 0 disables early termination."""

    patience: int = 5
    min_rel_improvement: float = 1e-4

    def __post_init__(self) -> None:
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.min_rel_improvement < 0:
            raise ValueError("min_rel_improvement must be non-negative")


@dataclass(frozen=True)
class RoundConfig:
    """Everything one communication round needs."""

    max_rounds: int = 80
    client_fraction: float = 1.0
    dims: ModelDims = ModelDims()
    train: TrainConfig = TrainConfig()
    dp: DpConfig = DpConfig(enabled=False)
    server_dp_enabled: bool = False
    codec: Codec = Codec()
    convergence: ConvergenceConfig = ConvergenceConfig()

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ValueError("client_fraction must be in (0, 1]")


@dataclass(frozen=True)
class RoundReport:
    """Bookkeeping for one communication round."""

    round_index: int
    selected_client_ids: tuple[int, ...]
    avg_loss: float
    per_client_losses: dict[int, float]
    global_params_checksum: int


@dataclass(eq=False)
class TrainingRun:
    """Outcome of a full federated training."""

    reports: list[RoundReport]
    final_params: ModelParams
    terminated_by: str  # "convergence" or "max_rounds"

    @property
    def rounds(self) -> int:
        return len(self.reports)


@dataclass(eq=False)
class GlobalState:
    """Mutable centre-side state threaded through the rounds."""

    clients: list[ClientState]
    master_seed: int
    params_vector: np.ndarray
    threads: int = 1


def select_clients(
    clients: Sequence[ClientState], fraction: float, round_seed: int
) -> list[ClientState]:
    """Sample max(ceil(fraction * N), 1) clients without replacement.

    Deterministic given round_seed; the result is ordered by client id and
    independent of the input ordering.
    """
    if not clients:
        raise ValueError("no clients to select from")
    by_id = sorted(clients, key=lambda c: c.client_id)
    m = max(math.ceil(fraction * len(by_id)), 1)
    if m >= len(by_id):
        return by_id
    rng = np.random.default_rng(round_seed)
    picks = rng.choice(len(by_id), size=m, replace=False)
    return [by_id[i] for i in sorted(picks)]


def client_update(
    client: ClientState,
    global_payload: bytes,
    cfg: RoundConfig,
    round_index: int,
    master_seed: int,
) -> tuple[bytes, int, float]:
    """One client's work for a round.

    Decodes the global model, trains locally with the seed derived from
    (master_seed, client_id, round), sanitizes the resulting weight vector
    through the privacy mechanism, and re-encodes it. Returns the encoded
    update, the client's sample count, and its local training MSE.
    """
    vector = decode(global_payload, cfg.codec)
    params = unflatten(vector, cfg.dims)
    train_cfg = replace(cfg.train, seed=derive_seed(master_seed, client.client_id, round_index))
    trained, loss = local_train(params, client.train_data, train_cfg)
    update = flatten(trained)
    update = perturb(update, cfg.dp, derive_seed(master_seed, client.client_id, round_index, "dp"))
    return encode(update, cfg.codec), client.n_samples, loss


def aggregate(updates: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Sample-count-weighted mean of parameter vectors.

    Sums in the given order; callers pass updates sorted by client id so
    the result is bit-reproducible.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    length = len(updates[0][0])
    total = 0
    for vector, n in updates:
        if len(vector) != length:
            raise ValueError(f"update length {len(vector)} != {length}")
        if n < 1:
            raise ValueError("sample counts must be positive")
        total += n
    acc = np.zeros(length)
    for vector, n in updates:
        acc += (n / total) * np.asarray(vector, dtype=np.float64)
    return acc


def checksum_vector(vector: np.ndarray) -> int:
    """FNV-1a 64 over the serialized wire bytes of a parameter vector."""
    return fnv1a64(serialize_vector(vector))


def run_round(state: GlobalState, cfg: RoundConfig, round_index: int) -> RoundReport:
    """Execute one communication round, updating the global parameters."""
    selected = select_clients(
        state.clients, cfg.client_fraction, derive_seed(state.master_seed, "select", round_index)
    )
    payload = encode(state.params_vector, cfg.codec)

    def work(client: ClientState) -> tuple[int, bytes, int, float]:
        update, n, loss = client_update(client, payload, cfg, round_index, state.master_seed)
        return client.client_id, update, n, loss

    if state.threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            results = list(pool.map(work, selected))
    else:
        results = [work(c) for c in selected]
    results.sort(key=lambda r: r[0])

    decoded = [(decode(update, cfg.codec), n) for _, update, n, _ in results]
    new_global = aggregate(decoded)
    if cfg.server_dp_enabled:
        new_global = perturb(
            new_global,
            replace(cfg.dp, enabled=True),
            derive_seed(state.master_seed, "server-dp", round_index),
        )
    state.params_vector = new_global

    losses = {cid: loss for cid, _, _, loss in results}
    avg_loss = sum(losses.values()) / len(losses)
    return RoundReport(
        round_index=round_index,
        selected_client_ids=tuple(c.client_id for c in selected),
        avg_loss=avg_loss,
        per_client_losses=losses,
        global_params_checksum=checksum_vector(new_global),
    )


def run_training(
    clients: Sequence[ClientState],
    cfg: RoundConfig,
    master_seed: int,
    threads: int = 1,
    round_hook: Callable[[RoundReport, np.ndarray], None] | None = None,
) -> TrainingRun:
    """Train for up to cfg.max_rounds rounds with plateau termination.

    round_hook, when given, observes each report and the new global vector
    (checkpointing and the like); it must not mutate the vector.
    """
    if not clients:
        raise ValueError("at least one client is required")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError(f"client ids must be unique, got {sorted(ids)}")

    w0 = flatten(init_params(cfg.dims, derive_seed(master_seed, "init")))
    state = GlobalState(clients=list(clients), master_seed=master_seed, params_vector=w0, threads=threads)

    reports: list[RoundReport] = []
    best = np.inf
    streak = 0
    terminated_by = "max_rounds"
    for k in range(1, cfg.max_rounds + 1):
        report = run_round(state, cfg, k)
        reports.append(report)
        if round_hook is not None:
            round_hook(report, state.params_vector)
        if cfg.convergence.patience > 0:
            if np.isfinite(best) and best > 0:
                rel = (best - report.avg_loss) / best
            else:
                rel = np.inf if not np.isfinite(best) else 0.0
            if rel < cfg.convergence.min_rel_improvement:
                streak += 1
            else:
                streak = 0
            best = min(best, report.avg_loss)
            if streak >= cfg.convergence.patience:
                terminated_by = "convergence"
                break
    return TrainingRun(
        reports=reports,
        final_params=unflatten(state.params_vector, cfg.dims),
        terminated_by=terminated_by,
    )


def train_centralized(
    pooled: WindowedDataset,
    cfg: TrainConfig,
    epochs: int = 30,
    dims: ModelDims = ModelDims(),
    initial: ModelParams | None = None,
    epoch_seeds: Sequence[int] | None = None,
) -> tuple[ModelParams, list[float]]:
    """Single-model baseline on pooled data; same model and optimizer as
    the clients. Returns the final parameters and per-epoch training MSEs.

    The default epoch seed schedule is derive(cfg.seed, epoch), identical
    to a single local_train call with local_epochs=epochs; an explicit
    schedule allows matching any round-derived seed sequence.
    """
    if pooled.count < 1:
        raise ValueError("pooled dataset is empty")
    if epoch_seeds is not None and len(epoch_seeds) != epochs:
        raise ValueError("epoch_seeds must provide one seed per epoch")
    params = initial if initial is not None else init_params(dims, derive_seed(cfg.seed, "init"))
    losses: list[float] = []
    for epoch in range(epochs):
        seed = epoch_seeds[epoch] if epoch_seeds is not None else derive_seed(cfg.seed, epoch)
        params, mse = local_train(params, pooled, replace(cfg, local_epochs=1), epoch_seeds=[seed])
        losses.append(mse)
    return params, losses


def write_round_reports(path, reports: Sequence[RoundReport], client_ids: Sequence[int]) -> None:
    """Append-style round log: round, avg_loss, one loss column per client,
    checksum. Unselected clients leave their cell empty."""
    ids = sorted(client_ids)
    lines = ["round,avg_loss," + ",".join(f"loss_{cid}" for cid in ids) + ",checksum"]
    for r in reports:
        cells = [str(r.round_index), repr(r.avg_loss)]
        cells += [repr(r.per_client_losses[cid]) if cid in r.per_client_losses else "" for cid in ids]
        cells.append(str(r.global_params_checksum))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
