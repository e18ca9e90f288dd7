import csv
import json
from pathlib import Path

import pytest

from mwmpc.certificates import CertifyReport
from mwmpc.cli import main
from mwmpc.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """\
seed: 3
system:
  name: scalar_affine
horizon: 3
m_range: [0, 4]
initial_states: [[1.0], [-0.5]]
steps: 20
tag: small
certificates:
  clf_samples: 500
  eta_state_samples: 50
  eta_profile_samples: 50
  lemma1_m: [1, 4]
oracle:
  horizon: 2
  exponents: [0, 2]
  levels: [-1.0, 0.0, 1.0]
"""


def _write(tmp_path, text, name="exp.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_step_tables(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "steps_small.csv")
    assert rows[0] == ["k", "x1", "u1", "stage_cost", "optimal_cost",
                       "terminal_stage_cost", "candidate_cost"]
    assert rows[1][:2] == ["0", "1.0"]
    assert float(rows[-1][3]) <= 1e-10          # final row: stage cost below stop level
    assert rows[-1][2] == ""                    # no control applied at the final state
    assert (tmp_path / "o" / "steps_small_1.csv").exists()


def test_sweep_schema(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["sweep-m", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "sweep_small.csv")
    assert rows[0] == ["m", "converged", "steps_to_stop_level", "final_stage_cost",
                       "lemma1_bound", "lemma1_measured"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3", "4"]
    for r in rows[1:]:
        assert float(r[5]) <= float(r[4])


def test_certify_passes_and_round_trips(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["certify", "--config", cfg, "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "certify_small.json").read_text())
    assert data["passed"] and data["clf"]["passed"]
    assert len(data["runs"]) == 2
    report = CertifyReport.from_dict(data)
    assert json.loads(json.dumps(report.to_dict())) == data
    assert report.exponent == data["constants"]["m_min"]


def test_certify_bad_controller_exits_2(tmp_path):
    code = main(["certify", "--config", str(CONFIGS / "bad_controller.yaml"),
                 "--out", str(tmp_path)])
    assert code == 2
    data = json.loads((tmp_path / "certify_bad.json").read_text())
    assert not data["passed"]
    assert not data["clf"]["passed"] and data["clf"]["worst_violation"] > 1.0


def test_oracle_test_passes(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["oracle-test", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "oracle_small.csv")
    assert len(rows) == 1 + 2 * 2
    assert all(r[-2:] == ["true", "true"] for r in rows[1:])


@pytest.mark.parametrize("text, fragment", [
    ("system: {name: scalar_affine}\n", "seed"),
    ("seed: 1\nsystem: {name: rocket}\n", "system.name"),
    ("seed: 1\nsystem: {name: scalar_affine}\nsteps: -3\n", "exp.yaml:3: steps"),
    ("seed: 1\nsystem: {name: scalar_affine}\nsolver:\n  fd_epsilon: zero\n", "solver.fd_epsilon"),
    ("seed: 1\nsystem: {name: scalar_affine}\nbogus: 2\n", "bogus"),
    ("seed: [1\n", "malformed YAML"),
])
def test_config_errors_exit_1(tmp_path, capsys, text, fragment):
    cfg = _write(tmp_path, text)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert fragment in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_exponent_validation():
    assert parse_config("seed: 1\nsystem: {name: scalar_affine}\nexponent: 4\n").exponent == 4
    with pytest.raises(ConfigError, match="exponent"):
        parse_config("seed: 1\nsystem: {name: scalar_affine}\nexponent: soon\n")


def test_seed_override_changes_echo(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["certify", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["certify", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "11"])
    a = json.loads((tmp_path / "a" / "certify_small.json").read_text())
    b = json.loads((tmp_path / "b" / "certify_small.json").read_text())
    assert a["config"]["seed"] == 3 and b["config"]["seed"] == 11


@pytest.mark.parametrize("cmd", ["simulate", "sweep-m", "certify", "oracle-test"])
def test_artifacts_reproducible(tmp_path, cmd):
    cfg = _write(tmp_path, SMALL)
    main([cmd, "--config", cfg, "--out", str(tmp_path / "a")])
    main([cmd, "--config", cfg, "--out", str(tmp_path / "b")])
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_workers_match_serial(tmp_path):
    cfg1 = _write(tmp_path, SMALL, "one.yaml")
    cfg2 = _write(tmp_path, SMALL + "workers: 2\n", "two.yaml")
    main(["sweep-m", "--config", cfg1, "--out", str(tmp_path / "a")])
    main(["sweep-m", "--config", cfg2, "--out", str(tmp_path / "b")])
    assert ((tmp_path / "a" / "sweep_small.csv").read_bytes()
            == (tmp_path / "b" / "sweep_small.csv").read_bytes())
