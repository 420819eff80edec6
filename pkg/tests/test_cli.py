import csv
import json
import subprocess
import sys

import pytest

from selfstab.cli import ConfigError, main, parse_config
from selfstab.sim import RESULT_COLUMNS

MINIMAL = """\
# three nodes in a row, everyone moves every round
algorithm = bMIS
graph.kind = path
graph.n = 3
scheduler.kind = synchronous
repetitions = 4
seed = 5
round_limit = 20
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_minimal_config():
    cfg, sweep = parse_config(MINIMAL)
    assert cfg.algorithm == "bMIS" and cfg.graph.n == 3 and cfg.scheduler.kind == "synchronous"
    assert cfg.repetitions == 4 and sweep is None


@pytest.mark.parametrize("text,line,fragment", [
    ("algorithm = qMIS\n", 1, "algorithm"),
    ("algorithm = bMIS\ngraph.n = many\n", 2, "graph.n"),
    ("algorithm = bMIS\nscheduler.p_s = 1.5\n", 2, "scheduler"),
    ("algorithm = bMIS\nalgorithm = dpMIS\n", 2, "already set"),
    ("algorithm = bMIS\nflavour = mint\n", 2, "flavour"),
    ("algorithm bMIS\n", 1, "key = value"),
])
def test_config_errors_point_at_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "exp.cfg")
    assert str(err.value).startswith(f"exp.cfg:{line}:") and fragment in str(err.value)


def test_run_writes_rows_and_aggregate(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, MINIMAL), "--out", str(out)]) == 0
    with open(out / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(RESULT_COLUMNS) and len(rows) == 5
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["repetitions"] == 4
    assert "avg_rounds" in capsys.readouterr().out


def test_fault_config_reports_table_keys(tmp_path):
    text = MINIMAL.replace("bMIS", "pfMIS").replace("synchronous", "distributed") + "faults = 3\n"
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert {"avg_moves", "avg_rounds", "success_rate"} <= set(agg)


def test_json_format(tmp_path):
    out = tmp_path / "out"
    main(["run", "--config", write(tmp_path, MINIMAL), "--out", str(out), "--format", "json"])
    records = json.loads((out / "results.json").read_text())
    assert list(records[0]) == list(RESULT_COLUMNS)


def test_unknown_algorithm_exits_with_two(tmp_path, capsys):
    code = main(["run", "--config", write(tmp_path, "algorithm = zMIS\n"), "--out", str(tmp_path)])
    assert code == 2 and "algorithm" in capsys.readouterr().err


def test_missing_config_exits_with_two(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, MINIMAL.replace("bMIS", "vtMIS").replace("synchronous", "distributed"))
    for d in ("a", "b"):
        main(["run", "--config", cfg, "--out", str(tmp_path / d)])
    for name in ("results.csv", "aggregate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = write(tmp_path, MINIMAL.replace("bMIS", "vtMIS").replace("synchronous", "distributed")
                .replace("graph.kind = path", "graph.kind = ba").replace("graph.n = 3", "graph.n = 12"))

    def results(out, *extra):
        main(["run", "--config", cfg, "--out", str(tmp_path / out), *extra])
        return (tmp_path / out / "results.csv").read_text()

    base = results("file")
    monkeypatch.setenv("SELFSTAB_SEED", "99")
    env = results("env")
    flag = results("flag", "--seed", "5")
    assert env != base
    assert flag == base


SWEEP = """\
algorithm = vpMIS
graph.kind = ba
graph.n = 30
graph.avg_degree = 4
scheduler.kind = distributed
repetitions = 5
seed = 2
sweep.axis = synchrony
sweep.values = 0.2, 0.6, 1.0
"""


def test_sweep_outputs(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["synchrony"]) for r in rows] == [0.2, 0.6, 1.0]
    rounds = [float(r["avg_rounds"]) for r in rows]
    assert rounds == sorted(rounds, reverse=True)
    lines = (out / "rounds.dat").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 4 and len(lines[1].split()) == 3
    again = tmp_path / "s2"
    main(["sweep", "--config", cfg, "--out", str(again)])
    for name in ("sweep.csv", "sweep.json", "rounds.dat", "moves.dat"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_sweep_over_sizes_gives_one_row_each(tmp_path):
    text = SWEEP.replace("vpMIS", "vtMIS").replace("synchrony", "n").replace("0.2, 0.6, 1.0", "10, 20, 30")
    text = text.replace("repetitions = 5", "repetitions = 2")
    out = tmp_path / "s"
    assert main(["sweep", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    assert len((out / "sweep.csv").read_text().splitlines()) == 4


def test_sweep_needs_values(tmp_path):
    text = MINIMAL + "sweep.axis = n\nsweep.values = \n"
    assert main(["sweep", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_verify_commands(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "nash", "--max-n", "4", "--out", str(out)]) == 0
    records = json.loads((out / "verify_nash.json").read_text())
    assert records and all(r["verdict"] == "pass" for r in records)
    assert main(["verify", "legitimacy", "--max-n", "5", "--algorithm", "dpMIS", "--out", str(out)]) == 0
    counts = [r["detail"]["count"] for r in json.loads((out / "verify_legitimacy.json").read_text())]
    assert counts == [1] * 31
    assert main(["verify", "containment", "--max-n", "4", "--algorithm", "pfMIS", "--out", str(out)]) == 0
    assert main(["verify", "sideways", "--out", str(out)]) == 2


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "selfstab", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and "selfstab" in done.stdout
