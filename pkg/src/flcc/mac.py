"""
Slotted CSMA/CA contention and per-round uplink outcomes.

One federated round is one MAC round. RTS/CTS is abstracted: the node that
wins backoff contention in a carrier-sense domain holds the channel for the
whole round and transmits once to its cell server.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .channel import ChannelConfig, linear_to_db, sinr_from_powers
from .errors import InvalidParameterError
from .geometry import CellPlan, NodeSite

MAX_WINDOW = 1024


class Mode(enum.Enum):
    FLCC = "flcc"
    BASELINE = "baseline"


@dataclass(frozen=True)
class MacConfig:
    contention_window: int = 16
    max_retries: int = 4
    active_probability: float = 1.0
    mode: Mode = Mode.FLCC

    def __post_init__(self):
        if self.contention_window < 1:
            raise InvalidParameterError("contention_window must be >= 1")
        if self.max_retries < 0:
            raise InvalidParameterError("max_retries must be >= 0")
        if not 0.0 <= self.active_probability <= 1.0:
            raise InvalidParameterError("active_probability must lie in [0, 1]")


@dataclass(frozen=True)
class TransmissionOutcome:
    node_id: int
    cell_id: int
    channel: int | None
    attempted: bool
    won_contention: bool
    sinr: float | None
    success: bool
    retries_used: int = 0


class ContentionResult(NamedTuple):
    winner: int | None
    colliders: frozenset
    retries: dict


def contend(cell_nodes: Sequence[int], cfg: MacConfig, rng: np.random.Generator) -> ContentionResult:
    """Binary exponential backoff among nodes sharing one carrier-sense domain.

    Every node draws a slot in [0, CW). A unique minimum wins. When several
    nodes share the minimum they collide, spend a retry and redraw from a
    doubled window (capped at 1024); the others keep their remaining
    countdown. Nodes that collide after ``max_retries`` retries give up for
    this round.
    """
    nodes = list(cell_nodes)
    if not nodes:
        return ContentionResult(None, frozenset(), {})
    retries = {n: 0 for n in nodes}
    window = {n: cfg.contention_window for n in nodes}
    slots = {n: int(rng.integers(0, cfg.contention_window)) for n in nodes}
    colliders: set = set()
    while slots:
        low = min(slots.values())
        at_min = [n for n in slots if slots[n] == low]
        if len(at_min) == 1:
            return ContentionResult(at_min[0], frozenset(colliders), retries)
        colliders.update(at_min)
        # survivors resume their countdown after the collided slot
        slots = {n: s - low - 1 for n, s in slots.items() if s != low}
        for n in at_min:
            if retries[n] >= cfg.max_retries:
                continue
            retries[n] += 1
            window[n] = min(2 * window[n], MAX_WINDOW)
            slots[n] = int(rng.integers(0, window[n]))
    return ContentionResult(None, frozenset(colliders), retries)


def _link_distances(tx: np.ndarray, rx: np.ndarray, d_min: float) -> np.ndarray:
    d = np.sqrt(((tx[:, None, :] - rx[None, :, :]) ** 2).sum(axis=2))
    return np.maximum(d, d_min)


def _resolve(transmitters, nodes_by_id, plan, ch_cfg, rng, collided=frozenset()):
    """SINR at each transmitter's own server given all co-channel transmitters.

    ``transmitters`` is a list of (node_id, channel). Returns node_id -> sinr.
    """
    if not transmitters:
        return {}
    ids = [t[0] for t in transmitters]
    chans = np.array([t[1] for t in transmitters])
    pos = np.array([nodes_by_id[i].position for i in ids], dtype=np.float64)
    power = np.array([nodes_by_id[i].tx_power for i in ids], dtype=np.float64)
    servers = plan.centers()[[nodes_by_id[i].cell_id for i in ids]]
    # fading[k, j]: gain from transmitter k to the server of transmitter j (block fading)
    fading = rng.exponential(1.0, size=(len(ids), len(ids)))
    rx = power[:, None] * fading * _link_distances(pos, servers, ch_cfg.d_min) ** (-ch_cfg.alpha)
    same = chans[:, None] == chans[None, :]
    np.fill_diagonal(same, False)
    interference = (rx * same).sum(axis=0)
    out = {}
    for j, node_id in enumerate(ids):
        out[node_id] = sinr_from_powers(rx[j, j], interference[j], ch_cfg.noise_power)
    return out


def simulate_round(
    nodes: Sequence[NodeSite],
    plan: CellPlan,
    ch_cfg: ChannelConfig,
    mac_cfg: MacConfig,
    rng: np.random.Generator,
) -> list[TransmissionOutcome]:
    """One uplink round; returns one outcome per node in input order.

    FLCC: each cell's active nodes contend on the cell's planned channel and
    the single winner transmits; co-channel winners elsewhere interfere.

    Baseline: each active node picks a channel uniformly at random. Nodes of
    one cell that picked the same channel contend with each other; winners
    are not coordinated across cells, so every same-channel winner in the
    network interferes at every other server. A server decodes at most one
    transmission per channel.
    """
    nodes_by_id = {n.id: n for n in nodes}
    active = rng.random(len(nodes)) < mac_cfg.active_probability
    active_ids = [n.id for n, a in zip(nodes, active) if a]

    if mac_cfg.mode is Mode.FLCC:
        channel_of = {i: plan.cell(nodes_by_id[i].cell_id).frequency_channel for i in active_ids}
    else:
        picks = rng.integers(0, max(plan.num_channels, 1), size=len(active_ids))
        channel_of = {i: int(c) for i, c in zip(active_ids, picks)}

    domains: dict[tuple[int, int], list[int]] = {}
    for i in active_ids:
        domains.setdefault((nodes_by_id[i].cell_id, channel_of[i]), []).append(i)

    winners, retries = [], {}
    for key in sorted(domains):
        result = contend(domains[key], mac_cfg, rng)
        retries.update(result.retries)
        if result.winner is not None:
            winners.append((result.winner, key[1]))
    winners.sort()
    sinr = _resolve(winners, nodes_by_id, plan, ch_cfg, rng)
    won = {w for w, _ in winners}

    outcomes = []
    for n, is_active in zip(nodes, active):
        if not is_active:
            channel = plan.cell(n.cell_id).frequency_channel if mac_cfg.mode is Mode.FLCC else None
            outcomes.append(TransmissionOutcome(n.id, n.cell_id, channel, False, False, None, False))
            continue
        s = sinr.get(n.id)
        outcomes.append(TransmissionOutcome(
            node_id=n.id,
            cell_id=n.cell_id,
            channel=channel_of[n.id],
            attempted=True,
            won_contention=n.id in won,
            sinr=s,
            success=s is not None and s >= ch_cfg.sinr_threshold,
            retries_used=retries.get(n.id, 0),
        ))
    return outcomes


def successful_set(outcomes: Sequence[TransmissionOutcome]) -> set[int]:
    return {o.node_id for o in outcomes if o.success}


def success_rate(outcomes: Sequence[TransmissionOutcome]) -> float:
    """Fraction of transmissions (contention winners) decoded at their server.

    Zero when nobody transmitted.
    """
    sent = sum(o.won_contention for o in outcomes)
    if sent == 0:
        return 0.0
    return sum(o.success for o in outcomes) / sent


def trace_rows(round_index: int, outcomes: Sequence[TransmissionOutcome]):
    """Rows for the outcome trace CSV."""
    for o in outcomes:
        if o.sinr is None:
            sinr_db = ""
        elif np.isinf(o.sinr):
            sinr_db = "inf"
        else:
            sinr_db = f"{float(linear_to_db(o.sinr)):.6f}"
        yield (round_index, o.node_id, o.cell_id, "" if o.channel is None else o.channel,
               int(o.attempted), int(o.won_contention), sinr_db, int(o.success))
