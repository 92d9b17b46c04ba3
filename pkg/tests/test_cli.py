import csv
import re

import numpy as np
import pytest

from flcc.cli import main
from flcc.commands import CURVE_HEADER, MAC_TRACE_HEADER, ROUND_LOG_HEADER, TRUST_LOG_HEADER

SMALL_RUN = """\
network.num_nodes = 6
fed.max_rounds = 2
data.min_samples = 30
data.max_samples = 40
data.eval_size = 300
"""


def _conf(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_rounds_writes_empty_logs(tmp_path):
    conf = _conf(tmp_path, SMALL_RUN.replace("fed.max_rounds = 2", "fed.max_rounds = 0"), "zero.conf")
    out = tmp_path / "zero"
    assert main(["fl-run", "--config", conf, "--out", str(out)]) == 0
    for name, header in [("round_log.csv", ROUND_LOG_HEADER), ("trust_log.csv", TRUST_LOG_HEADER),
                         ("mac_trace.csv", MAC_TRACE_HEADER)]:
        assert _rows(out / name) == [list(header)]
    assert (out / "config.txt").exists() and (out / "final_model.flcc").exists()


def test_reruns_are_byte_identical(tmp_path):
    conf = _conf(tmp_path, SMALL_RUN)
    for d in ("a", "b"):
        assert main(["fl-run", "--config", conf, "--out", str(tmp_path / d), "--mode", "baseline"]) == 0
    for name in ("round_log.csv", "trust_log.csv", "mac_trace.csv", "layout.csv", "partition.csv",
                 "config.txt", "accuracy_loss.svg", "final_model.flcc"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_copy_records_mode_and_seed(tmp_path):
    conf = _conf(tmp_path, SMALL_RUN)
    main(["fl-run", "--config", conf, "--out", str(tmp_path / "o"), "--mode", "baseline", "--seed", "9"])
    text = (tmp_path / "o" / "config.txt").read_text()
    assert "mac.mode = baseline" in text and "seed = 9" in text


def test_layout_and_trace_schemas(tmp_path):
    out = tmp_path / "o"
    main(["fl-run", "--config", _conf(tmp_path, SMALL_RUN), "--out", str(out)])
    assert _rows(out / "layout.csv")[0] == ["node_id", "x", "y", "cell_id", "role", "tx_power"]
    assert _rows(out / "cells.csv")[0] == ["cell_id", "cx", "cy", "channel"]
    assert _rows(out / "partition.csv")[0] == ["node_id", "sample_index"]
    trace = _rows(out / "mac_trace.csv")
    assert len(trace) == 1 + 6 * 2


def test_net_analyze_zero_intensity_is_one(tmp_path):
    conf = _conf(tmp_path, "analysis.intensities = 0\nchannel.noise_power = 0\nanalysis.trials = 500\n")
    out = tmp_path / "na"
    assert main(["net-analyze", "--config", conf, "--out", str(out)]) == 0
    rows = _rows(out / "ps_curve.csv")
    assert rows[0] == list(CURVE_HEADER)
    assert all(float(r[2]) == 1.0 and float(r[3]) == 1.0 for r in rows[1:])
    assert (out / "ps_curve.svg").exists() and (out / "capacity.svg").exists()


def test_net_analyze_curve_shape(tmp_path):
    conf = _conf(tmp_path, "analysis.trials = 2000\nnetwork.tx_power = 1\n")
    out = tmp_path / "na"
    assert main(["net-analyze", "--config", conf, "--out", str(out)]) == 0
    rows = _rows(out / "ps_curve.csv")[1:]
    by_lam = {}
    for r in rows:
        by_lam.setdefault(float(r[1]), []).append(float(r[2]))
    low, high = by_lam[0.001], by_lam[0.01]
    assert all(np.diff(low) < 0) and all(np.diff(high) < 0)
    assert all(h < l for h, l in zip(high, low))


def _series(svg_text):
    return re.findall(r'<polyline class="series" data-label="([^"]*)"', svg_text)


def test_compare_structure_and_values(tmp_path):
    conf = _conf(tmp_path, SMALL_RUN)
    for mode in ("flcc", "baseline"):
        assert main(["fl-run", "--config", conf, "--mode", mode, "--out", str(tmp_path / mode)]) == 0
    out = tmp_path / "cmp"
    assert main(["compare", str(tmp_path / "flcc"), str(tmp_path / "baseline"), "--out", str(out)]) == 0
    svg_text = (out / "compare.svg").read_text()
    labels = _series(svg_text)
    assert len(labels) == 4 and len(set(labels)) == 2
    merged = _rows(out / "compare.csv")
    assert merged[0] == ["run", "round", "accuracy", "loss"]
    for mode in ("flcc", "baseline"):
        src = [(r[0], r[3], r[4]) for r in _rows(tmp_path / mode / "round_log.csv")[1:]]
        got = [(r[1], r[2], r[3]) for r in merged[1:] if r[0] == mode]
        assert got == src


def test_compare_with_itself(tmp_path):
    conf = _conf(tmp_path, SMALL_RUN)
    main(["fl-run", "--config", conf, "--out", str(tmp_path / "a")])
    out = tmp_path / "cmp"
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "a"), "--out", str(out)]) == 0
    rows = _rows(out / "compare.csv")[1:]
    runs = sorted({r[0] for r in rows})
    assert len(runs) == 2
    a, b = ([r[1:] for r in rows if r[0] == name] for name in runs)
    assert a == b


@pytest.mark.parametrize("args,code", [
    (["fl-run", "--config", "{bad}", "--out", "{out}"], 2),
    (["net-analyze", "--config", "{missing}", "--out", "{out}"], 2),
    (["fl-run", "--config", "{badpath}", "--out", "{out}"], 3),
    (["compare", "{nowhere}", "{nowhere}", "--out", "{out}"], 3),
])
def test_exit_codes(tmp_path, args, code):
    paths = {
        "bad": _conf(tmp_path, "channel.alpha = 1.5\n", "bad.conf"),
        "missing": str(tmp_path / "absent.conf"),
        "badpath": _conf(tmp_path, "data.train_images = /nonexistent/i\ndata.train_labels = /nonexistent/l\n",
                         "badpath.conf"),
        "nowhere": str(tmp_path / "nowhere"),
        "out": str(tmp_path / "out"),
    }
    assert main([a.format(**paths) for a in args]) == code
