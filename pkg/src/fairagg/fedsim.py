"""Deterministic federated orchestration.

One round: sample clients, collect feedback losses on the broadcast model,
train locally, turn feedbacks into bounded responses, step the aggregator,
renormalize the decision over the sampled set, mix the deltas, and apply the
server optimizer.  The master seed fans out to per-round and per-client
substreams through seed sequences, so results never depend on thread count
or client execution order; deltas are always reduced in ascending client id.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregator import (
    AggregatorMethod,
    FtrlState,
    MethodKind,
    OnsState,
    aaggff_d_step,
    aaggff_s_step,
    baseline_coefficients,
    ftrl_init,
    normalize_selected,
    ons_init,
)
from .decision import (
    decision_grad,
    decision_loss,
    dr_response,
    linearized_grad,
    lipschitz_constants,
)
from .errors import DivergenceError, DomainError, InvalidDimensionError
from .metrics import PerformanceSummary, performance_summary
from .modeldata import Dataset, ModelSpec, accuracy, epoch_batches, loss_and_grad
from .response import CdfKind, ResponseBounds, ResponseVector, transform_losses
from .simplex import uniform_decision

logger = logging.getLogger(__name__)

# Substream tags for the master-seed fan-out; every consumer derives its
# generator as default_rng([seed, TAG, ...]) so streams never collide.
_STREAM_SAMPLING = 3
_STREAM_CLIENT = 4


@dataclass
class ClientUpdateResult:
    """What a client returns: feedback measured before any local step."""

    client_id: int
    feedback_loss: float
    delta: np.ndarray  # broadcast parameters minus final local parameters
    sample_count: int


class ServerOptKind(enum.Enum):
    SGD = "SGD"
    ADAM = "Adam"
    YOGI = "Yogi"
    ADAGRAD = "Adagrad"


@dataclass
class ServerOptimizer:
    """Server-side optimizer treating the mixed delta as a pseudo-gradient.

    Adaptive kinds keep first/second moments (no bias correction) with a
    denominator floor ``tau``.
    """

    kind: ServerOptKind = ServerOptKind.SGD
    lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None

    def __post_init__(self):
        if self.lr <= 0.0 or self.tau <= 0.0:
            raise DomainError("lr and tau must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DomainError("beta1 and beta2 must lie in [0, 1)")


def sample_clients(k: int, c: float, rng: np.random.Generator) -> list[int]:
    """Uniform sample (without replacement) of max(1, floor(c*k)) client ids."""
    if k < 1:
        raise InvalidDimensionError("need at least one client")
    if not (0.0 < c <= 1.0):
        raise DomainError(f"sampling fraction must be in (0,1], got {c}")
    size = max(1, int(np.floor(c * k)))
    chosen = rng.choice(k, size=size, replace=False)
    return sorted(int(i) for i in chosen)


def client_update(
    params: np.ndarray,
    data: Dataset,
    model_spec: ModelSpec,
    epochs: int,
    batch_size: int,
    lr: float,
    prox_mu: float,
    weight_decay: float,
    rng: np.random.Generator,
    client_id: int = -1,
    round_index: int = -1,
) -> ClientUpdateResult:
    """Evaluate feedback on the received model, then run local SGD.

    Feedback is measured strictly before any training step.  Each epoch
    shuffles the shard and walks it in minibatches; with prox_mu > 0 every
    step pulls back toward the received parameters.
    """
    if len(data) == 0:
        raise InvalidDimensionError("client dataset must be nonempty")
    received = np.asarray(params, dtype=float)

    # Overflow here is an expected, handled outcome (the client gets
    # dropped), so suppress the elementwise warnings instead of spewing them.
    with np.errstate(over="ignore", invalid="ignore"):
        feedback, _ = loss_and_grad(model_spec, received, data)
        if not np.isfinite(feedback):
            raise DivergenceError(
                f"non-finite feedback loss on client {client_id}",
                round_index=round_index,
                client_id=client_id,
            )

        local = received.copy()
        for _ in range(epochs):
            for batch_idx in epoch_batches(len(data), batch_size, rng):
                loss, grad = loss_and_grad(model_spec, local, data.subset(batch_idx))
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise DivergenceError(
                        f"non-finite training loss on client {client_id}",
                        round_index=round_index,
                        client_id=client_id,
                    )
                if prox_mu > 0.0:
                    grad = grad + prox_mu * (local - received)
                if weight_decay > 0.0:
                    grad = grad + weight_decay * local
                local = local - lr * grad
                if not np.all(np.isfinite(local)):
                    # Overflowed parameters with a still-finite loss; catch
                    # here so the client is dropped, not the round crashed.
                    raise DivergenceError(
                        f"non-finite local parameters on client {client_id}",
                        round_index=round_index,
                        client_id=client_id,
                    )

    return ClientUpdateResult(
        client_id=client_id,
        feedback_loss=float(feedback),
        delta=received - local,
        sample_count=len(data),
    )


def server_apply(
    params: np.ndarray, mixed_delta: np.ndarray, opt: ServerOptimizer
) -> np.ndarray:
    """Apply the mixed delta through the server optimizer; updates moments."""
    params = np.asarray(params, dtype=float)
    mixed_delta = np.asarray(mixed_delta, dtype=float)
    if params.shape != mixed_delta.shape:
        raise InvalidDimensionError("delta length does not match model")

    if opt.kind is ServerOptKind.SGD:
        return params - opt.lr * mixed_delta

    if opt.first_moment is None:
        opt.first_moment = np.zeros_like(params)
        opt.second_moment = np.zeros_like(params)
    g = mixed_delta
    opt.first_moment = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * g
    sq = g * g
    if opt.kind is ServerOptKind.ADAM:
        opt.second_moment = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * sq
    elif opt.kind is ServerOptKind.YOGI:
        opt.second_moment = opt.second_moment - (1.0 - opt.beta2) * np.sign(
            opt.second_moment - sq
        ) * sq
    elif opt.kind is ServerOptKind.ADAGRAD:
        opt.second_moment = opt.second_moment + sq
    else:
        raise DomainError(f"unknown server optimizer kind {opt.kind!r}")
    return params - opt.lr * opt.first_moment / (np.sqrt(opt.second_moment) + opt.tau)


@dataclass
class RoundReport:
    round: int
    sampled_ids: list[int]
    mean_feedback: float
    decision_loss: float
    decision: np.ndarray
    summary: PerformanceSummary


@dataclass
class SimulationState:
    """Everything one seed's run needs, advanced in place by run_round."""

    master_seed: int
    model_spec: ModelSpec
    clients: list[Dataset]
    params: np.ndarray
    method: AggregatorMethod
    cdf: CdfKind
    bounds: ResponseBounds
    sampling_c: float
    epochs: int
    batch_size: int
    lr: float
    lr_decay: float
    decay_step: int
    prox_mu: float
    weight_decay: float
    server_opt: ServerOptimizer
    threads: int = 1
    decision: np.ndarray = field(default=None)  # type: ignore[assignment]
    ons: OnsState | None = None
    ftrl: FtrlState | None = None

    def __post_init__(self):
        k = len(self.clients)
        if self.decision is None:
            self.decision = uniform_decision(k)
        constants = lipschitz_constants(self.bounds, self.sampling_c)
        if self.method.kind is MethodKind.AAGGFF_S and self.ons is None:
            self.ons = ons_init(k, constants.l_inf)
        if self.method.kind is MethodKind.AAGGFF_D and self.ftrl is None:
            # Bound of the gradient stream actually fed: exact gradients at
            # full participation, doubly-robust ones under sampling.
            bound = constants.l_inf if self.sampling_c == 1.0 else constants.l_inf_dr
            self.ftrl = ftrl_init(k, bound)

    @property
    def k(self) -> int:
        return len(self.clients)


def _effective_lr(state: SimulationState, t: int) -> float:
    return state.lr * state.lr_decay ** (t // state.decay_step)


def _run_clients(
    state: SimulationState, t: int, sampled: list[int]
) -> list[ClientUpdateResult]:
    lr_t = _effective_lr(state, t)

    def one(client_id: int) -> ClientUpdateResult:
        rng = np.random.default_rng(
            np.random.SeedSequence([state.master_seed, _STREAM_CLIENT, t, client_id])
        )
        return client_update(
            state.params,
            state.clients[client_id],
            state.model_spec,
            epochs=state.epochs,
            batch_size=state.batch_size,
            lr=lr_t,
            prox_mu=state.prox_mu,
            weight_decay=state.weight_decay,
            rng=rng,
            client_id=client_id,
            round_index=t,
        )

    results: list[ClientUpdateResult] = []
    if state.threads > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            futures = {pool.submit(one, i): i for i in sampled}
            for future, client_id in futures.items():
                try:
                    results.append(future.result())
                except DivergenceError:
                    logger.warning("dropping diverged client %d in round %d", client_id, t)
    else:
        for client_id in sampled:
            try:
                results.append(one(client_id))
            except DivergenceError:
                logger.warning("dropping diverged client %d in round %d", client_id, t)

    # Ascending client id fixes the floating-point reduction order.
    results.sort(key=lambda r: r.client_id)
    if not results:
        raise DivergenceError(f"every sampled client diverged in round {t}", round_index=t)
    return results


def run_round(state: SimulationState, t: int) -> RoundReport:
    """Advance the simulation by one round and report all intermediates."""
    k = state.k
    sampling_rng = np.random.default_rng(
        np.random.SeedSequence([state.master_seed, _STREAM_SAMPLING, t])
    )
    sampled = sample_clients(k, state.sampling_c, sampling_rng)
    results = _run_clients(state, t, sampled)
    survivors = [r.client_id for r in results]

    feedbacks = np.array([r.feedback_loss for r in results])
    responses = transform_losses(feedbacks, state.cdf, state.bounds)
    observed_mean = float(responses.mean())

    full_participation = len(survivors) == k
    observed = np.zeros(k, dtype=bool)
    observed[survivors] = True
    scattered = np.zeros(k)
    scattered[survivors] = responses

    method_kind = state.method.kind
    prev_decision = state.decision

    if method_kind is MethodKind.AAGGFF_D and not full_participation:
        raw = ResponseVector(values=scattered, observed=observed)
        r_for_loss = dr_response(raw, state.sampling_c)
        gradient = linearized_grad(r_for_loss, prev_decision, observed_mean)
    else:
        # Mean-impute any unobserved entries; exact vector at full
        # participation.
        r_for_loss = np.where(observed, scattered, observed_mean)
        gradient = decision_grad(prev_decision, r_for_loss)
    round_loss = decision_loss(prev_decision, r_for_loss)

    if method_kind in (
        MethodKind.STATIC,
        MethodKind.AFL,
        MethodKind.QFEDAVG,
        MethodKind.TERM,
        MethodKind.PROPFAIR,
    ):
        sizes = np.array([r.sample_count for r in results], dtype=float)
        coeffs = baseline_coefficients(state.method, sizes, feedbacks)
        new_decision = np.zeros(k)
        new_decision[survivors] = coeffs
    elif method_kind is MethodKind.AAGGFF_S:
        state.ons, new_decision = aaggff_s_step(state.ons, gradient)
    elif method_kind is MethodKind.AAGGFF_D:
        state.ftrl, new_decision = aaggff_d_step(state.ftrl, gradient)
    else:
        raise DomainError(f"unknown aggregation method {method_kind!r}")

    weights = normalize_selected(new_decision, survivors)
    mixed_delta = np.zeros_like(state.params)
    for weight, result in zip(weights, results):
        mixed_delta += weight * result.delta

    state.params = server_apply(state.params, mixed_delta, state.server_opt)
    state.decision = new_decision

    client_accuracy = np.array(
        [accuracy(state.model_spec, state.params, shard) for shard in state.clients]
    )
    return RoundReport(
        round=t,
        sampled_ids=survivors,
        mean_feedback=float(feedbacks.mean()),
        decision_loss=round_loss,
        decision=new_decision,
        summary=performance_summary(client_accuracy),
    )
