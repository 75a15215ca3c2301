"""Federated optimization engine.

The main loop (`run_fedcomloc`) is communication-skipping local training
with control variates: every iteration each sampled client takes one
gradient step corrected by its control variate, a pre-flipped coin decides
whether the round communicates, and on communication the sampled iterates
are averaged (with optional uplink/downlink/local compression) and the
control variates absorb the difference between the broadcast and the local
proposal.  `run_fedavg` and `run_scaffold` implement the classic baselines
under the same bit ledger and evaluation cadence.

Everything is single-process and deterministic: per-actor streams are
derived from the run seed, sampled clients are processed in ascending id
order, and repeated runs yield byte-identical records.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import compressors, models
from .compressors import IDENTITY, CompressorSpec, bit_cost
from .core import ParamVector, axpy, derive_stream
from .data import FederatedDataset
from .metrics import BitLedger, RunRecord

ALGORITHMS = ("fedcomloc", "fedavg", "sparse_fedavg", "scaffold")
VARIANTS = ("none", "com", "local", "global")


@dataclass(frozen=True)
class FedConfig:
    """Full description of one training run.

    T counts local iteration rounds for every algorithm; the baselines
    communicate every local_steps_baseline of them, the skipping algorithms
    communicate on the coin flips with probability p.  tau is the relative
    cost of one local round in the combined cost metric.
    """

    algorithm: str = "fedcomloc"
    variant: str = "com"
    n_clients: int = 20
    sample_size: int = 5
    p: float = 0.1
    gamma: float = 0.1
    T: int = 1000
    compressor: CompressorSpec = IDENTITY
    tau: float = 0.01
    seed: int = 0
    batch_size: int = 64
    local_steps_baseline: int = 10
    eval_every: int = 1


@dataclass
class ClientState:
    x: ParamVector
    h: ParamVector
    rng: np.random.Generator


@dataclass
class RunResult:
    """Training record plus final state.

    final_params is the server model for the baselines; for the skipping
    algorithm it is client 0's iterate after the last round (equal to the
    broadcast whenever the last round communicated).  h_drift tracks the
    max |sum_i h_i| per round, a diagnostic that stays near zero under full
    participation without downlink compression.
    """

    record: RunRecord
    final_params: ParamVector
    h_drift: np.ndarray = field(default_factory=lambda: np.zeros(0))


def config_violations(config: FedConfig) -> list[str]:
    """Invariant violations as key-named messages; empty when clean."""
    bad = []
    if config.algorithm not in ALGORITHMS:
        bad.append(f"fed.algorithm: unknown {config.algorithm!r}, expected one of {ALGORITHMS}")
    if config.variant not in VARIANTS:
        bad.append(f"fed.variant: unknown {config.variant!r}, expected one of {VARIANTS}")
    if config.n_clients < 1:
        bad.append(f"fed.n_clients: must be >= 1, got {config.n_clients}")
    if not 1 <= config.sample_size <= config.n_clients:
        bad.append(f"fed.sample_size: must be in [1, n_clients], got {config.sample_size}")
    if not 0.0 < config.p <= 1.0:
        bad.append(f"fed.p: must be in (0, 1], got {config.p}")
    if not config.gamma > 0:
        bad.append(f"fed.gamma: must be > 0, got {config.gamma}")
    if config.T < 1:
        bad.append(f"fed.T: must be >= 1, got {config.T}")
    if config.batch_size < 1:
        bad.append(f"fed.batch_size: must be >= 1, got {config.batch_size}")
    if config.tau < 0:
        bad.append(f"fed.tau: must be >= 0, got {config.tau}")
    if config.local_steps_baseline < 1:
        bad.append(f"fed.local_steps_baseline: must be >= 1, got {config.local_steps_baseline}")
    if config.eval_every < 1:
        bad.append(f"fed.eval_every: must be >= 1, got {config.eval_every}")
    return bad


def generate_coins(p: float, T: int, rng: np.random.Generator) -> np.ndarray:
    """T independent Bernoulli(p) communication coins, flipped up front."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return rng.random(T) < p


def local_step(
    client: ClientState,
    gamma: float,
    spec: models.ModelSpec,
    features: np.ndarray,
    labels: np.ndarray,
    batch: np.ndarray,
    compressor: CompressorSpec = IDENTITY,
    variant: str = "none",
) -> ParamVector:
    """One gradient step corrected by the client's control variate.

    With variant "local" the gradient is evaluated at the compressed iterate
    (a cheap-compute proxy) but the step still starts from the uncompressed
    one, which is never overwritten.
    """
    x_eval = client.x
    if variant == "local":
        x_eval = compressors.compress(compressor, client.x, client.rng)
    g = models.gradient(spec, x_eval, features, labels, batch)
    return axpy(-gamma, g - client.h, client.x)


def aggregate(
    xhats: list[ParamVector],
    variant: str = "none",
    compressor: CompressorSpec = IDENTITY,
    rng_server: np.random.Generator | None = None,
) -> tuple[ParamVector, list[ParamVector]]:
    """Mean of the sampled proposals with wire compression applied.

    Returns (next_iterate, wire_vectors).  For variant "com" each proposal
    is compressed before averaging and the compressed versions are what the
    control-variate update must see; for "global" the mean itself is
    compressed after averaging.  Inputs must already be in ascending
    client-id order so the reduction is bitwise deterministic.
    """
    if not xhats:
        raise ValueError("no sampled clients to aggregate")
    wire = list(xhats)
    if variant == "com":
        wire = [compressors.compress(compressor, x, rng_server) for x in wire]
    mean = np.mean(np.stack(wire), axis=0)
    if variant == "global":
        mean = compressors.compress(compressor, mean, rng_server)
    return mean, wire


def update_control(client: ClientState, x_new: ParamVector, xhat: ParamVector, p: float, gamma: float) -> ParamVector:
    """Control-variate update h + (p/gamma)(x_new - xhat); no-op on skipped rounds."""
    return client.h + (p / gamma) * (x_new - xhat)


class _Run:
    """Shared setup: shards, streams, ledger, and the evaluation routine."""

    def __init__(self, config: FedConfig, dataset: FederatedDataset, spec: models.ModelSpec):
        problems = config_violations(config)
        if dataset.partition is None:
            problems.append("dataset: missing client partition")
        elif len(dataset.partition) != config.n_clients:
            problems.append(
                f"fed.n_clients: partition covers {len(dataset.partition)} clients, config says {config.n_clients}"
            )
        if dataset.test_features is None or dataset.test_labels is None:
            problems.append("dataset: missing global test split")
        if spec.layer_sizes[0] != dataset.features.shape[1]:
            problems.append(
                f"model.layer_sizes: input width {spec.layer_sizes[0]} != feature count {dataset.features.shape[1]}"
            )
        if spec.layer_sizes[-1] < dataset.n_classes:
            problems.append(
                f"model.layer_sizes: output width {spec.layer_sizes[-1]} < class count {dataset.n_classes}"
            )
        if problems:
            raise ValueError("invalid run configuration: " + "; ".join(problems))

        self.config = config
        self.spec = spec
        self.dataset = dataset
        self.d = models.param_count(spec)
        self.shards = [
            (dataset.features[dataset.partition[i]], dataset.labels[dataset.partition[i]])
            for i in range(config.n_clients)
        ]
        self.rng_sample = derive_stream(config.seed, "sampling")
        self.rng_wire = derive_stream(config.seed, "wire")
        self.x0 = models.init_params(spec, derive_stream(config.seed, "init"))
        self.ledger = BitLedger()
        self.record = RunRecord(config=asdict(config), tau=config.tau)

    def client_stream(self, i: int) -> np.random.Generator:
        return derive_stream(self.config.seed, f"local/client-{i}")

    def sample_clients(self) -> list[int]:
        picked = self.rng_sample.choice(self.config.n_clients, size=self.config.sample_size, replace=False)
        return sorted(int(i) for i in picked)

    def evaluate(self, params: ParamVector, t: int) -> None:
        train_loss = float(
            np.mean([models.evaluate(self.spec, params, fx, fy)[0] for fx, fy in self.shards])
        )
        test_loss, test_acc = models.evaluate(self.spec, params, self.dataset.test_features, self.dataset.test_labels)
        self.record.record_eval(self.ledger, train_loss, test_loss, test_acc, t)


def run_fedcomloc(
    config: FedConfig,
    dataset: FederatedDataset,
    spec: models.ModelSpec,
    on_communicate=None,
) -> RunResult:
    """Communication-skipping control-variate training, T iteration rounds.

    Bits are charged per sampled client on communication rounds only; the
    "local" variant compresses computation rather than traffic, so its
    uplink is charged at full width.  on_communicate(t, params), when given,
    observes every post-aggregation broadcast.
    """
    run = _Run(config, dataset, spec)
    n, variant = config.n_clients, config.variant
    clients = [ClientState(run.x0.copy(), np.zeros(run.d), run.client_stream(i)) for i in range(n)]
    coins = generate_coins(config.p, config.T, derive_stream(config.seed, "coins"))
    uplink_spec = config.compressor if variant == "com" else IDENTITY
    downlink_spec = config.compressor if variant == "global" else IDENTITY
    uplink_cost = bit_cost(uplink_spec, run.d)
    downlink_cost = bit_cost(downlink_spec, run.d)

    run.evaluate(run.x0, t=0)
    h_drift = np.zeros(config.T)
    for t in range(config.T):
        sampled = run.sample_clients()
        xhats = []
        for i in sampled:
            client = clients[i]
            batch = models.sample_batch(run.shards[i][0].shape[0], config.batch_size, client.rng)
            xhats.append(local_step(client, config.gamma, spec, *run.shards[i], batch, config.compressor, variant))
        run.ledger.local_steps += 1

        if coins[t]:
            x_next, wire = aggregate(xhats, variant, config.compressor, run.rng_wire)
            for i, w in zip(sampled, wire):
                clients[i].h = update_control(clients[i], x_next, w, config.p, config.gamma)
                clients[i].x = x_next.copy()
            run.ledger.uplink_bits += config.sample_size * uplink_cost
            run.ledger.downlink_bits += config.sample_size * downlink_cost
            run.ledger.comm_rounds += 1
            if on_communicate is not None:
                on_communicate(t, x_next)
            if run.ledger.comm_rounds % config.eval_every == 0:
                run.evaluate(x_next, t=t + 1)
        else:
            for i, xhat in zip(sampled, xhats):
                clients[i].x = xhat
        h_drift[t] = np.abs(sum(c.h for c in clients)).max()

    run.record.extra_summary["control_sum_drift_max"] = float(h_drift.max())
    return RunResult(record=run.record, final_params=clients[0].x, h_drift=h_drift)


def run_fedavg(
    config: FedConfig,
    dataset: FederatedDataset,
    spec: models.ModelSpec,
    on_communicate=None,
) -> RunResult:
    """Periodic model averaging; sparse_fedavg compresses the uplink updates.

    Each round broadcasts the server model, runs local_steps_baseline SGD
    steps on every sampled client, and averages the (optionally compressed)
    model updates into the next broadcast.  ceil(T / local_steps_baseline)
    rounds keep the local-work budget aligned with the skipping algorithms.
    """
    run = _Run(config, dataset, spec)
    sparse = config.algorithm == "sparse_fedavg"
    uplink_cost = bit_cost(config.compressor if sparse else IDENTITY, run.d)
    downlink_cost = bit_cost(IDENTITY, run.d)
    steps = config.local_steps_baseline
    rounds = -(-config.T // steps)
    client_rngs = [run.client_stream(i) for i in range(config.n_clients)]

    x = run.x0.copy()
    run.evaluate(x, t=0)
    for r in range(rounds):
        sampled = run.sample_clients()
        deltas = []
        for i in sampled:
            fx, fy = run.shards[i]
            y = x.copy()
            for _ in range(steps):
                batch = models.sample_batch(fx.shape[0], config.batch_size, client_rngs[i])
                y -= config.gamma * models.gradient(spec, y, fx, fy, batch)
            deltas.append(y - x)
        if sparse:
            deltas = [compressors.compress(config.compressor, delta, run.rng_wire) for delta in deltas]
        x = x + np.mean(np.stack(deltas), axis=0)
        run.ledger.local_steps += steps
        run.ledger.uplink_bits += config.sample_size * uplink_cost
        run.ledger.downlink_bits += config.sample_size * downlink_cost
        run.ledger.comm_rounds += 1
        if on_communicate is not None:
            on_communicate((r + 1) * steps - 1, x)
        if run.ledger.comm_rounds % config.eval_every == 0:
            run.evaluate(x, t=(r + 1) * steps)

    return RunResult(record=run.record, final_params=x)


def run_scaffold(
    config: FedConfig,
    dataset: FederatedDataset,
    spec: models.ModelSpec,
    on_communicate=None,
) -> RunResult:
    """Model averaging with server/client control variates.

    Sampled clients step with the corrected gradient g - c_i + c, refresh
    c_i from the realized local progress, and the server averages the model
    updates and folds the control deltas back scaled by the participation
    fraction.  Model and control travel together, so both directions cost
    twice the raw width.
    """
    run = _Run(config, dataset, spec)
    wire_cost = 2 * bit_cost(IDENTITY, run.d)
    steps = config.local_steps_baseline
    rounds = -(-config.T // steps)
    client_rngs = [run.client_stream(i) for i in range(config.n_clients)]

    x = run.x0.copy()
    c_server = np.zeros(run.d)
    c_clients = [np.zeros(run.d) for _ in range(config.n_clients)]
    run.evaluate(x, t=0)
    for r in range(rounds):
        sampled = run.sample_clients()
        deltas_x, deltas_c = [], []
        for i in sampled:
            fx, fy = run.shards[i]
            y = x.copy()
            for _ in range(steps):
                batch = models.sample_batch(fx.shape[0], config.batch_size, client_rngs[i])
                g = models.gradient(spec, y, fx, fy, batch)
                y -= config.gamma * (g - c_clients[i] + c_server)
            c_new = c_clients[i] - c_server + (x - y) / (steps * config.gamma)
            deltas_x.append(y - x)
            deltas_c.append(c_new - c_clients[i])
            c_clients[i] = c_new
        x = x + np.mean(np.stack(deltas_x), axis=0)
        c_server = c_server + (config.sample_size / config.n_clients) * np.mean(np.stack(deltas_c), axis=0)
        run.ledger.local_steps += steps
        run.ledger.uplink_bits += config.sample_size * wire_cost
        run.ledger.downlink_bits += config.sample_size * wire_cost
        run.ledger.comm_rounds += 1
        if on_communicate is not None:
            on_communicate((r + 1) * steps - 1, x)
        if run.ledger.comm_rounds % config.eval_every == 0:
            run.evaluate(x, t=(r + 1) * steps)

    return RunResult(record=run.record, final_params=x)


def run(config: FedConfig, dataset: FederatedDataset, spec: models.ModelSpec, on_communicate=None) -> RunResult:
    """Dispatch on config.algorithm."""
    if config.algorithm == "fedcomloc":
        return run_fedcomloc(config, dataset, spec, on_communicate)
    if config.algorithm in ("fedavg", "sparse_fedavg"):
        return run_fedavg(config, dataset, spec, on_communicate)
    if config.algorithm == "scaffold":
        return run_scaffold(config, dataset, spec, on_communicate)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")
