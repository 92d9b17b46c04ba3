"""
The three experiment commands behind the ``flcc`` CLI.

Each command is a pure function of the resolved configuration: it writes
its CSV logs, SVG plots and a frozen copy of the configuration into the
output directory and touches nothing else.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import channel, geometry, learn, mac, svg
from .config import ExperimentConfig, serialize_config
from .data import (AttackKind, AttackSpec, LabeledDataset, PartitionSpec, bundled_paths, load_idx,
                   manifest_rows, partition)
from .errors import FormatError, InsufficientDataError, InvalidInputError
from .federate import FederationConfig, Hierarchy, round_rows, run_federation, trust_rows

log = logging.getLogger(__name__)

ROUND_LOG_HEADER = ("round", "A", "mac_success_rate", "accuracy", "loss", "grad_norm", "converged")
TRUST_LOG_HEADER = ("round", "node_id", "q", "p", "blacklisted")
MAC_TRACE_HEADER = ("round", "node_id", "cell_id", "channel", "attempted", "won", "sinr_db", "success")
CURVE_HEADER = ("T_dB", "lambda", "analytic_ps", "mc_ps", "mc_stderr", "capacity")
LAYOUT_HEADER = ("node_id", "x", "y", "cell_id", "role", "tx_power")
CELLS_HEADER = ("cell_id", "cx", "cy", "channel")
PARTITION_HEADER = ("node_id", "sample_index")
COMPARE_HEADER = ("run", "round", "accuracy", "loss")

# seed-stream tags for per-command RNG derivation
_LAYOUT_STREAM = 10
_PARTITION_STREAM = 11
_MC_STREAM = 12


@dataclass
class RunArtifacts:
    out_dir: Path
    files: list[Path] = field(default_factory=list)


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def _start(out_dir, cfg: ExperimentConfig) -> RunArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RunArtifacts(out, [_write_text(out / "config.txt", serialize_config(cfg))])


# -- configuration adapters ----------------------------------------------------------------

def channel_config(cfg: ExperimentConfig) -> channel.ChannelConfig:
    return channel.ChannelConfig(
        alpha=cfg["channel.alpha"],
        noise_power=cfg["channel.noise_power"],
        sinr_threshold=float(channel.db_to_linear(cfg["channel.sinr_threshold_db"])),
        active_probability=cfg["channel.active_probability"],
        d_min=cfg["channel.d_min"],
    )


def mac_config(cfg: ExperimentConfig, mode: mac.Mode) -> mac.MacConfig:
    return mac.MacConfig(
        contention_window=cfg["mac.contention_window"],
        max_retries=cfg["mac.max_retries"],
        active_probability=cfg["channel.active_probability"],
        mode=mode,
    )


def federation_config(cfg: ExperimentConfig, mode: mac.Mode) -> FederationConfig:
    return FederationConfig(
        max_rounds=cfg["fed.max_rounds"],
        epsilon=cfg["fed.epsilon"],
        trust_learning_rate=cfg["fed.trust_learning_rate"],
        blacklist_threshold=cfg["fed.blacklist_threshold"],
        initial_trust=cfg["fed.initial_trust"],
        validation_tolerance=cfg["fed.validation_tolerance"],
        hierarchy=Hierarchy(cfg["fed.hierarchy"]),
        cloud_blend=cfg["fed.cloud_blend"],
        trust_enabled=mode is mac.Mode.FLCC,
    )


def build_layout(cfg: ExperimentConfig):
    """(nodes with cells assigned, frequency-planned cell plan)."""
    region = geometry.Region(cfg["network.region_width"], cfg["network.region_height"])
    plan = geometry.build_cell_plan(region, cfg["network.cell_radius"], cfg["network.num_channels"])
    if not plan.coloring_ok:
        log.warning("%d channels cannot separate all adjacent cells; using best-effort plan",
                    cfg["network.num_channels"])
    seed = [cfg["seed"], _LAYOUT_STREAM]
    if cfg["network.num_nodes"] > 0:
        nodes = geometry.sample_fixed_count(cfg["network.num_nodes"], region, cfg["network.untrusted_fraction"],
                                            seed, cfg["network.tx_power"])
    else:
        nodes = geometry.sample_ppp(cfg["network.intensity"], region, cfg["network.untrusted_fraction"],
                                    seed, cfg["network.tx_power"])
    return geometry.assign_cells(nodes, plan), plan


def load_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """(training pool, trust-validation set, evaluation set)."""
    def paths(split, image_key, label_key):
        images, labels = cfg[image_key], cfg[label_key]
        if not images and not labels:
            return bundled_paths(split)
        if not (images and labels):
            raise InvalidInputError(f"set both {image_key} and {label_key}, or neither")
        return images, labels

    train = load_idx(*paths("train", "data.train_images", "data.train_labels"))
    held = load_idx(*paths("t10k", "data.test_images", "data.test_labels"))
    n_val = cfg["data.validation_size"]
    n_eval = cfg["data.eval_size"] or len(held) - n_val
    if n_val + n_eval > len(held) or n_eval < 1:
        raise InsufficientDataError(
            f"held-out set has {len(held)} items; need {n_val} for validation and at least "
            f"{max(n_eval, 1)} for evaluation"
        )
    validation = held.subset(np.arange(n_val))
    evaluation = held.subset(np.arange(n_val, n_val + n_eval))
    return train, validation, evaluation


def t_grid(cfg: ExperimentConfig) -> np.ndarray:
    lo, hi, step = cfg["analysis.t_db_min"], cfg["analysis.t_db_max"], cfg["analysis.t_db_step"]
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


# -- commands ---------------------------------------------------------------------------------

def cmd_net_analyze(cfg: ExperimentConfig, out_dir) -> RunArtifacts:
    """Analytic and Monte Carlo success probability and capacity against T."""
    art = _start(out_dir, cfg)
    ch = channel_config(cfg)
    grid = t_grid(cfg)
    d = cfg["analysis.link_distance"]
    power = cfg["network.tx_power"]
    rows, curves = [], []
    for li, lam in enumerate(cfg["analysis.intensities"]):
        analytic = channel.analytic_success_probability(
            lam * ch.active_probability, ch, d, power, sinr_threshold=channel.db_to_linear(grid))
        mc, se = [], []
        for ti, t_db in enumerate(grid):
            est, err = channel.monte_carlo_success_probability(
                lam, ch, d, power, cfg["analysis.trials"], [cfg["seed"], _MC_STREAM, li, ti],
                sinr_threshold=float(channel.db_to_linear(t_db)))
            mc.append(est)
            se.append(err)
        capacity = channel.csma_capacity(channel.db_to_linear(grid), analytic)
        for i, t_db in enumerate(grid):
            rows.append((float(t_db), float(lam), float(analytic[i]), mc[i], se[i], float(capacity[i])))
        curves.append((lam, np.asarray(analytic), np.asarray(mc), np.asarray(capacity)))
    art.files.append(write_csv(art.out_dir / "ps_curve.csv", CURVE_HEADER, rows))

    ps_series, cap_series = [], []
    for i, (lam, analytic, mc, capacity) in enumerate(curves):
        color = svg.PALETTE[i % len(svg.PALETTE)]
        ps_series.append(svg.Series(f"analytic, lambda={lam:g}", grid, analytic, color=color))
        ps_series.append(svg.Series(f"simulated, lambda={lam:g}", grid, mc, dashed=True, markers=True,
                                    color=color))
        cap_series.append(svg.Series(f"lambda={lam:g}", grid, capacity, color=color))
    art.files.append(_write_text(art.out_dir / "ps_curve.svg", svg.render([
        svg.Panel("Successful transmission probability", "T (dB)", "P(SINR >= T)", ps_series)])))
    art.files.append(_write_text(art.out_dir / "capacity.svg", svg.render([
        svg.Panel("CSMA capacity", "T (dB)", "bits/s/Hz", cap_series)])))
    return art


def cmd_fl_run(cfg: ExperimentConfig, out_dir, mode: mac.Mode | str | None = None) -> RunArtifacts:
    """Federated training over the simulated network in FLCC or baseline mode."""
    mode = mac.Mode(mode if mode is not None else cfg["mac.mode"])
    cfg = cfg.with_overrides(mac__mode=mode.value)
    art = _start(out_dir, cfg)
    nodes, plan = build_layout(cfg)
    train, validation, evaluation = load_datasets(cfg)
    spec = PartitionSpec(cfg["data.min_samples"], cfg["data.max_samples"], cfg["data.overlap_allowed"])
    datasets, indices = partition(train, [n.id for n in nodes], spec,
                                  np.random.default_rng([cfg["seed"], _PARTITION_STREAM]))
    arch = learn.ModelArch(kind=cfg["learn.arch"])
    result = run_federation(
        nodes, plan, channel_config(cfg), mac_config(cfg, mode), federation_config(cfg, mode), datasets,
        test_set=evaluation,
        validation_set=validation if len(validation) else None,
        arch=arch,
        sgd_cfg=learn.SgdConfig(cfg["learn.learning_rate"], cfg["learn.batch_size"]),
        attack=AttackSpec(AttackKind(cfg["attack.kind"]), cfg["attack.magnitude"]),
        rng_seed=cfg["seed"],
    )
    out = art.out_dir
    art.files.append(write_csv(out / "layout.csv", LAYOUT_HEADER, geometry.layout_rows(nodes)))
    art.files.append(write_csv(out / "cells.csv", CELLS_HEADER, geometry.cell_rows(plan)))
    art.files.append(write_csv(out / "partition.csv", PARTITION_HEADER, manifest_rows(indices)))
    art.files.append(write_csv(out / "round_log.csv", ROUND_LOG_HEADER, round_rows(result.records)))
    art.files.append(write_csv(out / "trust_log.csv", TRUST_LOG_HEADER, trust_rows(result.records)))
    art.files.append(write_csv(out / "mac_trace.csv", MAC_TRACE_HEADER,
                               (row for t, outcomes in result.mac_trace for row in mac.trace_rows(t, outcomes))))
    rounds = [r.round for r in result.records]
    label = mode.value
    art.files.append(_write_text(out / "accuracy_loss.svg", svg.render([
        svg.Panel("Accuracy", "round", "accuracy", [svg.Series(label, rounds, [r.accuracy for r in result.records])]),
        svg.Panel("Loss", "round", "cross-entropy", [svg.Series(label, rounds, [r.loss for r in result.records])]),
    ])))
    checkpoint = out / "final_model.flcc"
    learn.save_checkpoint(result.final_params, checkpoint)
    art.files.append(checkpoint)
    return art


def read_round_log(run_dir) -> list[dict[str, str]]:
    path = Path(run_dir) / "round_log.csv"
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != ROUND_LOG_HEADER:
                raise FormatError(f"{run_dir}: round_log.csv has header {reader.fieldnames}")
            rows = list(reader)
    except OSError as exc:
        raise FormatError(f"{run_dir}: cannot read round_log.csv ({exc.strerror})") from exc
    for i, row in enumerate(rows, start=2):
        try:
            int(row["round"]), float(row["accuracy"]), float(row["loss"])
        except (TypeError, ValueError):
            raise FormatError(f"{run_dir}: round_log.csv line {i} is ill-formed") from None
    return rows


def cmd_compare(run_dirs: Sequence, out_dir) -> RunArtifacts:
    """Overlay accuracy and loss curves of several completed runs."""
    if len(run_dirs) < 2:
        raise InvalidInputError("compare needs at least two run directories")
    logs = [(Path(d), read_round_log(d)) for d in run_dirs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out)

    labels, seen = [], {}
    for d, _ in logs:
        base = d.name or str(d)
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")

    rows = [(label, r["round"], r["accuracy"], r["loss"]) for label, (_, log_rows) in zip(labels, logs)
            for r in log_rows]
    art.files.append(write_csv(out / "compare.csv", COMPARE_HEADER, rows))
    acc, loss = [], []
    for label, (_, log_rows) in zip(labels, logs):
        rounds = [int(r["round"]) for r in log_rows]
        acc.append(svg.Series(label, rounds, [float(r["accuracy"]) for r in log_rows]))
        loss.append(svg.Series(label, rounds, [float(r["loss"]) for r in log_rows]))
    art.files.append(_write_text(out / "compare.svg", svg.render([
        svg.Panel("Accuracy", "round", "accuracy", acc),
        svg.Panel("Loss", "round", "cross-entropy", loss),
    ])))
    return art
