"""
Trust-weighted federated averaging over the simulated uplink.

Trust is an exponential reward tracker per device: ``q <- q + beta (r - q)``
with ``r = 1`` when the device's update looks benign and ``r = 0`` otherwise.
Aggregation weights are the trust scores normalised over the round's
participants. Devices whose score drops below the blacklist threshold are
excluded for good.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import learn
from .channel import ChannelConfig
from .data import AttackKind, AttackSpec, LabeledDataset, corrupt_params, flip_labels
from .errors import InvalidInputError, InvalidParameterError, NoParticipantsError
from .geometry import CellPlan, NodeSite, Role
from .learn import LocalUpdate, ModelArch, ModelParams, SgdConfig
from .mac import MacConfig, Mode, TransmissionOutcome, simulate_round, success_rate, successful_set

log = logging.getLogger(__name__)

# RNG stream tags, combined with (seed, node, round) into independent streams
_STREAM_MAC = 1
_STREAM_TRAIN = 2
_STREAM_ATTACK = 3


class Hierarchy(enum.Enum):
    SINGLE_SERVER = "single_server"
    CELL_PLUS_CLOUD = "cell_plus_cloud"


@dataclass(frozen=True)
class FederationConfig:
    max_rounds: int = 300
    epsilon: float = 1e-4
    trust_learning_rate: float = 0.2
    blacklist_threshold: float = 0.05
    initial_trust: float = 0.5
    validation_tolerance: float = 0.1
    hierarchy: Hierarchy = Hierarchy.SINGLE_SERVER
    cloud_blend: float = 0.5
    # off in baseline runs: uniform weights, nobody is ever down-weighted
    trust_enabled: bool = True

    def __post_init__(self):
        if self.max_rounds < 0:
            raise InvalidParameterError("max_rounds must be >= 0")
        if not self.epsilon >= 0:
            raise InvalidParameterError("epsilon must be >= 0")
        if not 0 < self.trust_learning_rate <= 1:
            raise InvalidParameterError("trust_learning_rate must lie in (0, 1]")
        if not 0 <= self.initial_trust <= 1:
            raise InvalidParameterError("initial_trust must lie in [0, 1]")
        if not 0 <= self.blacklist_threshold <= 1:
            raise InvalidParameterError("blacklist_threshold must lie in [0, 1]")
        if not self.validation_tolerance >= 0:
            raise InvalidParameterError("validation_tolerance must be >= 0")
        if not 0 <= self.cloud_blend <= 1:
            raise InvalidParameterError("cloud_blend must lie in [0, 1]")


@dataclass
class TrustState:
    scores: dict[int, float]
    blacklisted: set[int] = field(default_factory=set)

    @classmethod
    def fresh(cls, node_ids, initial: float) -> "TrustState":
        return cls({i: float(initial) for i in node_ids})

    def copy(self) -> "TrustState":
        return TrustState(dict(self.scores), set(self.blacklisted))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    participants: int  # A: devices whose uplink met the SINR threshold
    accuracy: float
    loss: float
    grad_norm: float
    mac_success_rate: float
    converged: bool
    # node_id -> (q, p, blacklisted)
    trust: Mapping[int, tuple[float, float, bool]]


@dataclass
class FederationResult:
    records: list[RoundRecord]
    final_params: ModelParams
    mac_trace: list[tuple[int, list[TransmissionOutcome]]]
    trust: TrustState


def normalize_trust(scores: Mapping[int, float], participants: Sequence[int],
                    blacklisted=frozenset()) -> dict[int, float]:
    """p_i = q_i / sum of q over participants; uniform when every score is zero.

    Blacklisted participants get p = 0 and do not count towards the uniform
    fallback.
    """
    if not participants:
        return {}
    q = {i: (0.0 if i in blacklisted else float(scores[i])) for i in participants}
    if any(v < 0 for v in q.values()):
        raise InvalidParameterError("trust scores must be >= 0")
    total = math.fsum(q.values())
    if total > 0:
        return {i: v / total for i, v in q.items()}
    eligible = [i for i in participants if i not in blacklisted]
    if not eligible:
        return {i: 0.0 for i in participants}
    return {i: (1.0 / len(eligible) if i not in blacklisted else 0.0) for i in participants}


def aggregate(updates: Sequence[LocalUpdate], weights) -> ModelParams:
    """Weighted parameter average sum_i p_i W_i.

    ``weights`` is either aligned with ``updates`` or a mapping keyed by
    node id.
    """
    if not updates:
        raise NoParticipantsError("no participant updates to aggregate")
    arch = updates[0].params.arch
    if any(u.params.arch != arch for u in updates):
        raise InvalidInputError("updates use different architectures")
    if isinstance(weights, Mapping):
        w = np.array([weights[u.node_id] for u in updates], dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(updates),):
        raise InvalidInputError("one weight per update is required")
    stacked = np.stack([u.params.values for u in updates])
    return ModelParams(w @ stacked, arch)


def weighted_mean_gradient(updates: Sequence[LocalUpdate], weights: Mapping[int, float]) -> np.ndarray:
    return sum(weights[u.node_id] * u.gradient for u in updates)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(a @ b / (na * nb))


def update_trust(
    state: TrustState,
    updates: Sequence[LocalUpdate],
    reference_gradient: np.ndarray,
    cfg: FederationConfig,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
    reference_loss: float | None = None,
) -> TrustState:
    """Reward or penalise this round's participants.

    A participant is rewarded when its gradient has non-negative cosine
    similarity with ``reference_gradient`` and, if a validation set is
    given, its parameters do not raise validation loss more than
    ``validation_tolerance`` above ``reference_loss``. Non-participants and
    blacklisted devices keep their scores.
    """
    new = state.copy()
    beta = cfg.trust_learning_rate
    for u in updates:
        if u.node_id in new.blacklisted:
            continue
        reward = _cosine(u.gradient, reference_gradient) >= 0.0
        if reward and validation is not None and reference_loss is not None:
            val_loss = learn.evaluate(u.params, *validation).loss
            reward = val_loss <= (1.0 + cfg.validation_tolerance) * reference_loss
        q = new.scores[u.node_id]
        q += beta * (float(reward) - q)
        new.scores[u.node_id] = q
        if q < cfg.blacklist_threshold:
            new.blacklisted.add(u.node_id)
    return new


def mean_gradient_norm(updates: Sequence[LocalUpdate]) -> float:
    if not updates:
        return math.inf
    return float(np.linalg.norm(np.mean([u.gradient for u in updates], axis=0)))


def check_convergence(updates: Sequence[LocalUpdate], epsilon: float) -> bool:
    """True when || mean of participant gradients ||_2 <= epsilon.

    Opposite gradients cancel in the mean, so a round can test as converged
    even when every individual gradient is large.
    """
    if not updates:
        return False
    return mean_gradient_norm(updates) <= epsilon


def cloud_blend(cell_model: ModelParams, cloud_model: ModelParams, blend: float) -> ModelParams:
    if cell_model.arch != cloud_model.arch:
        raise InvalidInputError("cell and cloud models use different architectures")
    return ModelParams(blend * cell_model.values + (1.0 - blend) * cloud_model.values, cell_model.arch)


def cloud_average(models: Sequence[ModelParams]) -> ModelParams:
    return ModelParams(np.mean([m.values for m in models], axis=0), models[0].arch)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def run_federation(
    nodes: Sequence[NodeSite],
    plan: CellPlan,
    ch_cfg: ChannelConfig,
    mac_cfg: MacConfig,
    fed_cfg: FederationConfig,
    datasets: Mapping[int, LabeledDataset],
    *,
    test_set: LabeledDataset,
    validation_set: LabeledDataset | None = None,
    arch: ModelArch = ModelArch(),
    sgd_cfg: SgdConfig = SgdConfig(),
    attack: AttackSpec = AttackSpec(),
    rng_seed: int = 0,
) -> FederationResult:
    """Run the federated training loop over the simulated network.

    Each round: broadcast the global model, let the MAC decide who gets
    through, train the successful devices locally (untrusted devices submit
    poisoned updates), stop if the mean gradient is below epsilon, otherwise
    aggregate with trust weights, update trust and evaluate.

    Devices that lose contention or fail the SINR test would discard their
    update at the next broadcast, so their local training is skipped; the
    per-(node, round) RNG streams make this invisible in the results.
    """
    untrusted = {n.id for n in nodes if n.role is Role.UNTRUSTED}
    missing = [n.id for n in nodes if n.id not in datasets]
    if missing:
        raise InvalidInputError(f"nodes without a local dataset: {missing}")
    local = {}
    for n in nodes:
        ds = datasets[n.id]
        if n.id in untrusted and attack.kind is AttackKind.LABEL_FLIP:
            ds = flip_labels(ds)
        local[n.id] = (ds.inputs(), ds.labels)
    test_x, test_y = test_set.inputs(), test_set.labels
    validation = (validation_set.inputs(), validation_set.labels) if validation_set is not None else None

    global_model = learn.init_model(arch, rng_seed)
    cell_ids = sorted({c.cell_id for c in plan.cells})
    hierarchical = fed_cfg.hierarchy is Hierarchy.CELL_PLUS_CLOUD
    cell_models = {c: global_model for c in cell_ids}
    trust = TrustState.fresh([n.id for n in nodes], fed_cfg.initial_trust)
    node_cell = {n.id: n.cell_id for n in nodes}
    mac_rng = _rng(rng_seed, _STREAM_MAC)

    records: list[RoundRecord] = []
    trace: list[tuple[int, list[TransmissionOutcome]]] = []
    for t in range(1, fed_cfg.max_rounds + 1):
        outcomes = simulate_round(nodes, plan, ch_cfg, mac_cfg, mac_rng)
        trace.append((t, outcomes))
        succeeded = sorted(successful_set(outcomes))
        participants = [i for i in succeeded if i not in trust.blacklisted]

        updates = []
        for i in participants:
            start = cell_models[node_cell[i]] if hierarchical else global_model
            x, y = local[i]
            upd = learn.local_train(start, x, y, sgd_cfg, _rng(rng_seed, _STREAM_TRAIN, i, t), node_id=i)
            if i in untrusted and attack.kind is not AttackKind.LABEL_FLIP:
                values = corrupt_params(upd.params.values, start.values, attack,
                                        _rng(rng_seed, _STREAM_ATTACK, i, t))
                grad = -upd.gradient if attack.kind is AttackKind.SIGN_FLIP_GRADIENT else upd.gradient
                upd = LocalUpdate(i, upd.params.replace_values(values), grad, upd.sample_count)
            updates.append(upd)

        grad_norm = mean_gradient_norm(updates) if updates else 0.0
        converged = check_convergence(updates, fed_cfg.epsilon)
        weights: dict[int, float] = {}
        if updates and not converged:
            if hierarchical:
                global_model, cell_models, trust, weights = _hierarchical_round(
                    updates, cell_models, trust, fed_cfg, validation, node_cell)
            else:
                weights = _weights(trust, participants, fed_cfg)
                previous = global_model
                global_model = aggregate(updates, weights)
                if fed_cfg.trust_enabled:
                    ref_loss = learn.evaluate(previous, *validation).loss if validation else None
                    trust = update_trust(trust, updates, weighted_mean_gradient(updates, weights),
                                         fed_cfg, validation, ref_loss)

        metrics = learn.evaluate(global_model, test_x, test_y)
        snapshot = {n.id: (trust.scores[n.id], weights.get(n.id, 0.0), n.id in trust.blacklisted)
                    for n in nodes}
        records.append(RoundRecord(
            round=t,
            participants=len(succeeded),
            accuracy=metrics.accuracy,
            loss=metrics.loss,
            grad_norm=grad_norm,
            mac_success_rate=success_rate(outcomes),
            converged=converged,
            trust=snapshot,
        ))
        log.debug("round %d: A=%d acc=%.4f loss=%.4f", t, len(succeeded), metrics.accuracy, metrics.loss)
        if converged:
            break
    return FederationResult(records, global_model, trace, trust)


def _weights(trust: TrustState, participants: Sequence[int], cfg: FederationConfig) -> dict[int, float]:
    if not cfg.trust_enabled:
        return {i: 1.0 / len(participants) for i in participants}
    return normalize_trust(trust.scores, participants, trust.blacklisted)


def _hierarchical_round(updates, cell_models, trust, cfg, validation, node_cell):
    """Per-cell trust-weighted aggregation, blended with the previous cloud model."""
    cloud_prev = cloud_average([cell_models[c] for c in sorted(cell_models)])
    by_cell: dict[int, list[LocalUpdate]] = {}
    for u in updates:
        by_cell.setdefault(node_cell[u.node_id], []).append(u)
    new_cells = {}
    weights: dict[int, float] = {}
    for c in sorted(cell_models):
        cell_updates = by_cell.get(c, [])
        if cell_updates:
            w = _weights(trust, [u.node_id for u in cell_updates], cfg)
            weights.update(w)
            agg = aggregate(cell_updates, w)
            if cfg.trust_enabled:
                ref_loss = learn.evaluate(cell_models[c], *validation).loss if validation else None
                trust = update_trust(trust, cell_updates, weighted_mean_gradient(cell_updates, w),
                                     cfg, validation, ref_loss)
        else:
            agg = cell_models[c]
        new_cells[c] = cloud_blend(agg, cloud_prev, cfg.cloud_blend)
    cloud = cloud_average([new_cells[c] for c in sorted(new_cells)])
    return cloud, new_cells, trust, weights


def round_rows(records: Sequence[RoundRecord]):
    for r in records:
        yield (r.round, r.participants, r.mac_success_rate, r.accuracy, r.loss, r.grad_norm, int(r.converged))


def trust_rows(records: Sequence[RoundRecord]):
    for r in records:
        for node_id in sorted(r.trust):
            q, p, black = r.trust[node_id]
            yield (r.round, node_id, q, p, int(black))
