"""The synchronous federated round protocol.

One round is: sample participants, broadcast the global model, run the
per-client computation, apply the matching server update, evaluate. Four
server optimizers share the machinery:

* fagh     — clients send (gradient, Hessian first row, n); the server
             smooths both with bias-corrected moving averages and takes a
             regularized rank-1 Newton step solved in closed form.
* fedavg   — clients run local SGD; the server averages model deltas by
             sample count.
* scaffold — local SGD with control-variate drift correction; the server
             keeps per-client and global control variates.
* fedexp   — fedavg clients with an extrapolated server step size >= 1.

Everything is deterministic per (config, seed): random draws come from
counter-based streams keyed by purpose, round, and client, and reductions
run in sorted client order.
"""

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import data as datamod
from .metrics import RoundRecord, evaluate_global
from .models import Batch, ModelSpec, gradient, hessian_first_row, init_params
from .numkit import (
    MomentState,
    as_vector,
    bias_correct,
    ema_update,
    frozen,
    rank1_regularized_solve,
    vdot,
    weighted_average,
)
from .rng import stream

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# wire/domain types


@dataclass(frozen=True)
class ClientReport:
    """FAGH uplink payload: local gradient, local Hessian first row, and the
    sample count behind them (2d + 1 scalars)."""

    g: np.ndarray
    v: np.ndarray
    n_samples: int

    def __post_init__(self):
        g = frozen(as_vector(self.g, name="g"))
        v = frozen(as_vector(self.v, dim=g.size, name="v"))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "v", v)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class ModelDelta:
    """First-order uplink payload: local model change and sample count, plus
    the new local control variate when SCAFFOLD is running."""

    delta: np.ndarray
    n_samples: int
    control_update: np.ndarray | None = None

    def __post_init__(self):
        delta = frozen(as_vector(self.delta, name="delta"))
        object.__setattr__(self, "delta", delta)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.control_update is not None:
            cu = frozen(as_vector(self.control_update, dim=delta.size,
                                  name="control_update"))
            object.__setattr__(self, "control_update", cu)


@dataclass(frozen=True)
class FaghServerState:
    w: np.ndarray
    moments: MomentState
    eta: float
    rho: float
    fallback_count: int = 0

    def __post_init__(self):
        w = frozen(as_vector(self.w, name="w"))
        object.__setattr__(self, "w", w)
        if self.moments.dim != w.size:
            raise ValueError("moment vectors do not match model dimension")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.fallback_count < 0:
            raise ValueError("fallback_count must be >= 0")


@dataclass(frozen=True)
class ScaffoldState:
    w: np.ndarray
    c_global: np.ndarray
    c_local: dict  # client id -> control variate; absent means zero
    local_lr: float
    global_lr: float
    num_clients: int

    def __post_init__(self):
        w = frozen(as_vector(self.w, name="w"))
        c = frozen(as_vector(self.c_global, dim=w.size, name="c_global"))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "c_global", c)
        if not self.local_lr > 0 or not self.global_lr > 0:
            raise ValueError("learning rates must be > 0")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")

    def control_for(self, client_id: int) -> np.ndarray:
        got = self.c_local.get(client_id)
        return got if got is not None else np.zeros(self.w.size)


@dataclass(frozen=True)
class RoundPlan:
    """Who participates this round and how clients select their batch
    (batch_size None means the full local dataset)."""

    round_index: int
    participants: tuple
    batch_size: int | None = None

    def __post_init__(self):
        if not self.participants:
            raise ValueError("a round plan needs at least one participant")
        if tuple(sorted(self.participants)) != tuple(self.participants):
            raise ValueError("participants must be sorted")


# ---------------------------------------------------------------------------
# participation


def sample_participants(K: int, fraction: float, seed: int,
                        round_index: int) -> list:
    """Uniform sample without replacement of max(1, round(fraction*K))
    clients, deterministic per (seed, round_index)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if K < 1:
        raise ValueError("K must be >= 1")
    count = max(1, round(fraction * K))
    rng = stream(seed, "participation", round_index)
    picked = rng.choice(K, size=count, replace=False)
    return sorted(int(c) for c in picked)


# ---------------------------------------------------------------------------
# client computation


def client_fagh_step(spec: ModelSpec, w, local_data: Batch,
                     batch_size: int | None = None,
                     rng: np.random.Generator | None = None) -> ClientReport:
    """One FAGH client evaluation: gradient and Hessian first row on the
    selected batch. No local epochs; exactly one evaluation of each."""
    batch = local_data
    if batch_size is not None and batch_size < local_data.size:
        if rng is None:
            raise ValueError("minibatch selection needs a random generator")
        idx = np.sort(rng.choice(local_data.size, size=batch_size, replace=False))
        batch = Batch(features=local_data.features[idx],
                      labels=local_data.labels[idx])
    return ClientReport(g=gradient(spec, w, batch),
                        v=hessian_first_row(spec, w, batch),
                        n_samples=batch.size)


def client_local_sgd(spec: ModelSpec, w, local_data: Batch, epochs: int,
                     local_lr: float, batch_size: int,
                     rng: np.random.Generator,
                     correction: np.ndarray | None = None) -> ModelDelta:
    """Seeded-shuffled minibatch SGD for the first-order baselines.

    Each step takes w <- w - local_lr * (gradient + correction); SCAFFOLD
    passes correction = c_global - c_local, everyone else None. For SCAFFOLD
    the returned control_update is the client's new control variate, which
    works out to the mean gradient over the local steps:
    (w_start - w_final) / (steps * local_lr) - correction.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not local_lr > 0:
        raise ValueError("local_lr must be > 0")
    w0 = as_vector(w, dim=spec.param_count, name="w")
    if correction is not None:
        correction = as_vector(correction, dim=spec.param_count, name="correction")
    n = local_data.size
    w_cur = w0.copy()
    steps = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            batch = Batch(features=local_data.features[idx],
                          labels=local_data.labels[idx])
            g = gradient(spec, w_cur, batch)
            if correction is not None:
                g = g + correction
            w_cur = w_cur - local_lr * g
            steps += 1
    delta = w_cur - w0
    control_update = None
    if correction is not None:
        if steps == 0:
            control_update = np.zeros(spec.param_count)
        else:
            control_update = (w0 - w_cur) / (steps * local_lr) - correction
    return ModelDelta(delta=delta, n_samples=n, control_update=control_update)


# ---------------------------------------------------------------------------
# server updates


def aggregate_reports(reports: list) -> tuple[np.ndarray, np.ndarray]:
    """Sample-count-weighted average of client gradients and Hessian rows."""
    if not reports:
        raise ValueError("no reports to aggregate")
    total = sum(r.n_samples for r in reports)
    weights = [r.n_samples / total for r in reports]
    g = weighted_average([r.g for r in reports], weights)
    v = weighted_average([r.v for r in reports], weights)
    return g, v


def server_fagh_update(state: FaghServerState, g_global, v_global) -> FaghServerState:
    """Advance the moments, bias-correct, solve the regularized rank-1 Newton
    system in closed form, and step the global model."""
    moments = ema_update(state.moments, g_global, v_global)
    G, V = bias_correct(moments)
    direction, fell_back = rank1_regularized_solve(V, G, state.rho)
    w = state.w - state.eta * direction
    return replace(state, w=w, moments=moments,
                   fallback_count=state.fallback_count + int(fell_back))


def server_fedavg_update(w, deltas: list) -> np.ndarray:
    """w plus the sample-count-weighted average of client deltas."""
    if not deltas:
        raise ValueError("no deltas to aggregate")
    w = as_vector(w, name="w")
    total = sum(d.n_samples for d in deltas)
    weights = [d.n_samples / total for d in deltas]
    return w + weighted_average([d.delta for d in deltas], weights)


def server_scaffold_update(state: ScaffoldState, deltas: list,
                           participant_ids: list) -> ScaffoldState:
    """Uniform-mean model update plus the control-variate bookkeeping:
    c_global moves by (|S|/K) * mean(c_i_new - c_i_old), and each
    participant's stored control variate is replaced by its new value."""
    if not deltas:
        raise ValueError("no deltas to aggregate")
    if len(deltas) != len(participant_ids):
        raise ValueError("deltas and participant ids differ in length")
    if any(d.control_update is None for d in deltas):
        raise ValueError("scaffold deltas must carry control updates")
    m = len(deltas)
    uniform = [1.0 / m] * m
    avg_delta = weighted_average([d.delta for d in deltas], uniform)
    w = state.w + state.global_lr * avg_delta

    changes = [d.control_update - state.control_for(cid)
               for cid, d in zip(participant_ids, deltas)]
    mean_change = weighted_average(changes, uniform)
    c_global = state.c_global + (m / state.num_clients) * mean_change
    c_local = dict(state.c_local)
    for cid, d in zip(participant_ids, deltas):
        c_local[cid] = frozen(d.control_update)
    return replace(state, w=w, c_global=c_global, c_local=c_local)


def fedexp_step_size(deltas: list, epsilon: float) -> float:
    """Server step size max(1, sum_i ||d_i||^2 / (2 |S| (||mean||^2 + eps)));
    never below the plain averaging step."""
    if not deltas:
        raise ValueError("no deltas to aggregate")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    m = len(deltas)
    mean_delta = weighted_average([d.delta for d in deltas], [1.0 / m] * m)
    sum_sq = sum(vdot(d.delta, d.delta) for d in deltas)
    denom = 2.0 * m * (vdot(mean_delta, mean_delta) + epsilon)
    return 1.0 if denom == 0.0 else max(1.0, sum_sq / denom)


def server_fedexp_update(w, deltas: list, epsilon: float) -> np.ndarray:
    """Mean client delta applied with the extrapolated step size."""
    w = as_vector(w, name="w")
    eta_g = fedexp_step_size(deltas, epsilon)
    m = len(deltas)
    mean_delta = weighted_average([d.delta for d in deltas], [1.0 / m] * m)
    return w + eta_g * mean_delta


# ---------------------------------------------------------------------------
# round orchestration


def init_state(config, spec: ModelSpec):
    """Initial algorithm state with the shared deterministic w_0."""
    w0 = init_params(spec, stream(config.seed, "init"))
    if config.algorithm == "fagh":
        moments = MomentState.zeros(spec.param_count, config.beta1, config.beta2)
        return FaghServerState(w=w0, moments=moments, eta=config.eta,
                               rho=config.rho)
    if config.algorithm == "scaffold":
        return ScaffoldState(w=w0, c_global=np.zeros(spec.param_count),
                             c_local={}, local_lr=config.local_lr,
                             global_lr=config.global_lr,
                             num_clients=config.clients)
    if config.algorithm in ("fedavg", "fedexp"):
        return w0
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def _state_w(algorithm: str, state) -> np.ndarray:
    return state if algorithm in ("fedavg", "fedexp") else state.w


def run_round(config, state, spec: ModelSpec, train_set, test_set,
              partition, round_index: int):
    """Execute one communication round; returns (new_state, RoundRecord).

    Empty-partitioned participants are skipped without replacement; if every
    sampled client is empty the round is skipped entirely (the model is
    still evaluated so the record stream stays contiguous).
    """
    t_start = time.perf_counter()
    d = spec.param_count
    sampled = sample_participants(config.clients, config.fraction,
                                  config.seed, round_index)
    active = [cid for cid in sampled if partition.assignments[cid].size > 0]
    for cid in sampled:
        if cid not in active:
            log.warning("round %d: client %d has no local data, skipped",
                        round_index, cid)

    fallback = False
    if not active:
        log.warning("round %d: all sampled clients empty, round skipped",
                    round_index)
        uplink = downlink = 0
    elif config.algorithm == "fagh":
        batch_size = config.batch_size if config.batch_mode == "minibatch" else None
        plan = RoundPlan(round_index=round_index, participants=tuple(active),
                         batch_size=batch_size)
        reports = []
        for cid in plan.participants:
            local = train_set.to_batch(partition.assignments[cid])
            rng = stream(config.seed, "client-batch", round_index, cid)
            reports.append(client_fagh_step(spec, state.w, local,
                                            batch_size=plan.batch_size, rng=rng))
        g_global, v_global = aggregate_reports(reports)
        before = state.fallback_count
        state = server_fagh_update(state, g_global, v_global)
        fallback = state.fallback_count > before
        uplink = len(active) * (2 * d + 1)
        downlink = len(active) * d
    elif config.algorithm in ("fedavg", "fedexp"):
        deltas = []
        for cid in active:
            local = train_set.to_batch(partition.assignments[cid])
            rng = stream(config.seed, "local-sgd", round_index, cid)
            deltas.append(client_local_sgd(spec, state, local,
                                           config.local_epochs, config.local_lr,
                                           config.batch_size, rng))
        if config.algorithm == "fedavg":
            state = server_fedavg_update(state, deltas)
        else:
            state = server_fedexp_update(state, deltas, config.epsilon)
        uplink = len(active) * (d + 1)
        downlink = len(active) * d
    elif config.algorithm == "scaffold":
        deltas = []
        for cid in active:
            local = train_set.to_batch(partition.assignments[cid])
            rng = stream(config.seed, "local-sgd", round_index, cid)
            correction = state.c_global - state.control_for(cid)
            deltas.append(client_local_sgd(spec, state.w, local,
                                           config.local_epochs, state.local_lr,
                                           config.batch_size, rng,
                                           correction=correction))
        state = server_scaffold_update(state, deltas, active)
        uplink = len(active) * (2 * d + 1)   # delta + control update + n
        downlink = len(active) * 2 * d       # model + global control variate
    else:
        raise ValueError(f"unknown algorithm {config.algorithm!r}")

    train_loss, test_loss, test_acc = evaluate_global(
        spec, _state_w(config.algorithm, state), train_set, test_set)
    record = RoundRecord(round=round_index, train_loss=train_loss,
                         test_loss=test_loss, test_accuracy=test_acc,
                         wall_time_s=time.perf_counter() - t_start,
                         uplink_scalars=uplink, downlink_scalars=downlink,
                         fallback=fallback)
    return state, record


def prepare_experiment(config):
    """Materialize (spec, train set, test set, partition) from a config."""
    if config.dataset == "synthetic":
        train = datamod.synth_classification(config.seed, config.n_train,
                                             config.input_dim, config.num_classes,
                                             config.separation, split="train")
        test = datamod.synth_classification(config.seed, config.n_test,
                                            config.input_dim, config.num_classes,
                                            config.separation, split="test")
    else:
        train = datamod.load_idx(config.train_images, config.train_labels,
                                 split="train")
        test = datamod.load_idx(config.test_images, config.test_labels,
                                split="test")
    spec = ModelSpec(kind=config.model,
                     input_dim=train.features.shape[1],
                     num_classes=max(train.num_classes, test.num_classes),
                     hidden_sizes=config.hidden_sizes,
                     include_bias=config.include_bias)
    if config.partitioner == "dirichlet":
        partition = datamod.dirichlet_partition(train, config.clients,
                                                config.alpha, config.seed)
    else:
        partition = datamod.shard_partition(train, config.num_shards,
                                            config.shards_per_client, config.seed)
    return spec, train, test, partition


def run_experiment(config) -> list:
    """Run all configured rounds and return the per-round records."""
    spec, train, test, partition = prepare_experiment(config)
    state = init_state(config, spec)
    records = []
    for t in range(1, config.rounds + 1):
        state, record = run_round(config, state, spec, train, test, partition, t)
        records.append(record)
    return records
