"""
Physical layer: Rayleigh block fading, single-slope path loss and SINR.

The analytic success probability is the usual closed form for a typical
receiver in a Poisson field of Rayleigh-faded interferers with equal
transmit power:

    P_s = exp(-T d^a N0 / P) * exp(-lam_a pi d^2 T^(2/a) G(1+2/a) G(1-2/a))

It is cross-checked against :func:`monte_carlo_success_probability`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidParameterError

# truncation radius of the Monte Carlo interferer disk, in units of max(d, lambda^-1/2)
MC_RADIUS_FACTOR = 10.0
_MC_CHUNK = 4096


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class ChannelConfig:
    alpha: float = 4.0
    noise_power: float = 1e-12
    sinr_threshold: float = 10.0  # linear
    active_probability: float = 1.0
    d_min: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 2:
            raise InvalidParameterError(f"alpha must be >= 2, got {self.alpha}")
        if not self.noise_power >= 0:
            raise InvalidParameterError("noise_power must be >= 0")
        if not self.sinr_threshold > 0:
            raise InvalidParameterError("sinr_threshold must be > 0")
        if not 0.0 <= self.active_probability <= 1.0:
            raise InvalidParameterError("active_probability must lie in [0, 1]")
        if not self.d_min > 0:
            raise InvalidParameterError("d_min must be > 0")


@dataclass(frozen=True)
class LinkDraw:
    fading: float
    distance: float
    active: bool = True


class SinrSample(NamedTuple):
    signal: float
    interference: float
    sinr: float


def received_power(tx_power, fading, distance, alpha):
    """P * h * d^-alpha; vectorises over numpy arrays."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance <= 0):
        raise InvalidParameterError("distance must be > 0")
    out = np.asarray(tx_power, dtype=np.float64) * np.asarray(fading, dtype=np.float64) * distance ** (-alpha)
    return float(out) if out.ndim == 0 else out


def sinr_from_powers(signal: float, interference: float, noise_power: float) -> float:
    denom = interference + noise_power
    if denom <= 0:
        return math.inf
    return signal / denom


def compute_sinr(
    target: LinkDraw,
    tx_power: float,
    interferers: Sequence[tuple[LinkDraw, float]],
    cfg: ChannelConfig,
) -> SinrSample:
    """SINR at a receiver; inactive interferers contribute nothing."""
    signal = received_power(tx_power, target.fading, target.distance, cfg.alpha)
    interference = 0.0
    for link, power in interferers:
        if link.distance <= 0:
            raise InvalidParameterError("interferer distance must be > 0")
        if link.active:
            interference += received_power(power, link.fading, link.distance, cfg.alpha)
    return SinrSample(signal, interference, sinr_from_powers(signal, interference, cfg.noise_power))


def _interference_constant(alpha: float) -> float:
    # Gamma(1 + 2/a) Gamma(1 - 2/a) = (2 pi / a) / sin(2 pi / a)
    return math.gamma(1.0 + 2.0 / alpha) * math.gamma(1.0 - 2.0 / alpha)


def analytic_success_probability(
    active_intensity,
    cfg: ChannelConfig,
    link_distance: float,
    tx_power: float = 1.0,
    sinr_threshold=None,
):
    """Closed-form P(SINR >= T) for a link of length ``link_distance``.

    ``sinr_threshold`` overrides ``cfg.sinr_threshold`` and may be an array.
    """
    if cfg.alpha <= 2:
        raise InvalidParameterError("analytic success probability needs alpha > 2")
    if np.any(np.asarray(active_intensity) < 0):
        raise InvalidParameterError("active_intensity must be >= 0")
    if link_distance <= 0 or tx_power <= 0:
        raise InvalidParameterError("link_distance and tx_power must be > 0")
    t = np.asarray(cfg.sinr_threshold if sinr_threshold is None else sinr_threshold, dtype=np.float64)
    a = cfg.alpha
    noise_term = t * link_distance**a * cfg.noise_power / tx_power
    interference_term = (np.asarray(active_intensity, dtype=np.float64) * math.pi * link_distance**2
                         * t ** (2.0 / a) * _interference_constant(a))
    ps = np.exp(-noise_term - interference_term)
    return float(ps) if ps.ndim == 0 else ps


def monte_carlo_success_probability(
    intensity: float,
    cfg: ChannelConfig,
    link_distance: float,
    tx_power: float = 1.0,
    trials: int = 100_000,
    rng_seed: int = 0,
    sinr_threshold=None,
) -> tuple[float, float]:
    """Empirical P(SINR >= T) with its binomial standard error.

    Each trial draws a PPP of intensity ``intensity`` on a disk of radius
    ``10 * max(d, intensity^-1/2)`` around the receiver, keeps each point
    with probability ``cfg.active_probability``, and draws unit-mean
    exponential power gains for every link. Interferer distances are
    floored at ``cfg.d_min``.

    Trials are processed in fixed-size chunks, each with its own child seed,
    so the estimate does not depend on how the work is split.
    """
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    t = cfg.sinr_threshold if sinr_threshold is None else float(sinr_threshold)
    scale = link_distance if intensity <= 0 else max(link_distance, intensity ** -0.5)
    radius = MC_RADIUS_FACTOR * scale
    mean_points = intensity * cfg.active_probability * math.pi * radius**2

    successes = 0
    n_chunks = -(-trials // _MC_CHUNK)
    children = np.random.SeedSequence(rng_seed).spawn(n_chunks)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        n = min(_MC_CHUNK, trials - k * _MC_CHUNK)
        signal = tx_power * rng.exponential(1.0, n) * max(link_distance, cfg.d_min) ** (-cfg.alpha)
        # thinning a PPP by P_A is again a PPP with intensity lambda * P_A
        counts = rng.poisson(mean_points, n)
        total = int(counts.sum())
        r = radius * np.sqrt(rng.random(total))
        r = np.maximum(r, cfg.d_min)
        power = tx_power * rng.exponential(1.0, total) * r ** (-cfg.alpha)
        owner = np.repeat(np.arange(n), counts)
        interference = np.bincount(owner, weights=power, minlength=n)
        denom = interference + cfg.noise_power
        with np.errstate(divide="ignore"):
            sinr = np.where(denom > 0, signal / np.where(denom > 0, denom, 1.0), np.inf)
        successes += int(np.count_nonzero(sinr >= t))
    p = successes / trials
    return p, math.sqrt(p * (1.0 - p) / trials)


def csma_capacity(sinr_threshold, success_probability):
    """Maximum capacity log2(1 + T) * P(SINR >= T) in bits/s/Hz."""
    ps = np.asarray(success_probability, dtype=np.float64)
    if np.any((ps < 0) | (ps > 1)):
        raise InvalidParameterError("success probability must lie in [0, 1]")
    c = np.log2(1.0 + np.asarray(sinr_threshold, dtype=np.float64)) * ps
    return float(c) if c.ndim == 0 else c


def fading_draws(rng: np.random.Generator, size) -> np.ndarray:
    """Unit-mean exponential power gains (Rayleigh amplitude)."""
    return rng.exponential(1.0, size)
