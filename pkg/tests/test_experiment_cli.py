import csv
import math

import numpy as np
import pytest
import yaml

from resilient_dmpc.cli import main
from resilient_dmpc.config import default_tree, load_config
from resilient_dmpc.experiment import (CONNECTION_HEADER, COST_HEADER, DETECTION_HEADER, SOC_HEADER, SUMMARY_HEADER,
                                       TRANSFER_HEADER, fmt, scenario_config)


@pytest.fixture
def short_yaml(tmp_path):
    tree = default_tree()
    tree["horizon"]["steps"] = 6
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump(tree))
    return path


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_fmt():
    assert fmt(0.1) == "0.1"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(math.nan) == ""
    assert fmt(True) == "1" and fmt(False) == "0"
    assert fmt(np.int64(7)) == "7"


def test_scenario_table():
    base = load_config()
    s1, s2, s3, s4 = (scenario_config(base, n) for n in (1, 2, 3, 4))
    assert (s1.strategy, s1.attacks, s1.load_error) == ("nominal", False, False)
    assert (s2.strategy, s2.attacks, s2.load_error) == ("nominal", True, True)
    assert s3.strategy == "robust" and s4.strategy == "resilient"
    with pytest.raises(ValueError):
        scenario_config(base, 5)


def test_validate(short_yaml, capsys):
    assert main(["validate", "--config", str(short_yaml)]) == 0
    assert "ok" in capsys.readouterr().out


def test_missing_config_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["validate"])
    assert exc.value.code == 2


def test_unreadable_or_invalid_config(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    tree = default_tree()
    tree["topology"]["p_t_max"] = 200.0
    bad.write_text(yaml.safe_dump(tree))
    assert main(["validate", "--config", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_simulate_writes_timeseries(short_yaml, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(short_yaml), "--seed", "2", "--out", str(out)]) == 0
    n_agents, n_edges, steps = 8, 10, 6
    expected = {
        "soc.csv": (SOC_HEADER, steps * n_agents),
        "costs.csv": (COST_HEADER, steps * n_agents),
        "transfers.csv": (TRANSFER_HEADER, steps * n_edges),
        "connections.csv": (CONNECTION_HEADER, steps * 2 * n_edges),
    }
    for name, (header, count) in expected.items():
        h, rows = read(out / name)
        assert tuple(h) == tuple(header)
        assert len(rows) == count
    h, rows = read(out / "detections.csv")
    assert tuple(h) == tuple(DETECTION_HEADER)
    # one row per regular agent and hypothesis (none plus each neighbor)
    regular_hyp = sum(1 + d for d in (2, 3, 2, 3, 3))
    assert len(rows) == steps * regular_hyp
    soc_h, soc_rows = read(out / "soc.csv")
    for r in soc_rows:
        assert float(r[3]) == 0.4 and float(r[4]) == 0.7


def test_nominal_detection_columns_empty(short_yaml, tmp_path):
    out = tmp_path / "nom"
    assert main(["simulate", "--config", str(short_yaml), "--strategy", "nominal", "--out", str(out)]) == 0
    h, rows = read(out / "detections.csv")
    assert all(r[h.index("posterior")] == "" for r in rows)


def test_compare_is_byte_identical(short_yaml, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--config", str(short_yaml), "--seed", "7", "--out", str(a)]) == 0
    assert main(["compare", "--config", str(short_yaml), "--seed", "7", "--out", str(b)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(files) == 1 + 4 * 5
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    h, rows = read(a / "summary.csv")
    assert tuple(h) == tuple(SUMMARY_HEADER)
    assert [r[0] for r in rows] == ["1", "2", "3", "4"]
    assert float(rows[0][h.index("normalized_cost")]) == 1.0
    assert "seed=7" in capsys.readouterr().out
