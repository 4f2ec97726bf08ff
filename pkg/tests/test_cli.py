import json

import numpy as np
import pytest

from fair.cli import main
from fair.scm import ScmSpec


def test_run_is_byte_identical(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "linear-d15", "sample_sizes": [120], "replications": 2,
                               "estimators": ["pool-ls", "oracle", "fair-gb"], "fair": {"total_iters": 100}}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    main(["run", "--config", str(cfg), "--seed", "5", "--out", str(c)])
    assert a.read_bytes() != c.read_bytes()
    assert "wrote" in capsys.readouterr().out


def test_run_needs_output(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "linear-d15", "replications": 1}))
    assert main(["run", "--config", str(cfg)]) == 2


def test_make_spec_and_simulate(tmp_path):
    spec_path, out = tmp_path / "spec.json", tmp_path / "x.csv"
    assert main(["make-spec", "--experiment", "nonlinear-k2", "--seed", "1", "--out", str(spec_path)]) == 0
    spec = ScmSpec.from_json(spec_path.read_text())
    assert spec.dag.d == 26
    assert main(["simulate", "--spec", str(spec_path), "--env", "1", "--n", "7", "--out", str(out)]) == 0
    first = out.read_bytes()
    main(["simulate", "--spec", str(spec_path), "--env", "1", "--n", "7", "--out", str(out)])
    assert out.read_bytes() == first
    lines = first.decode().splitlines()
    assert lines[0].split(",") == [f"x{j}" for j in range(1, 27)] + ["y"]
    assert np.loadtxt(out, delimiter=",", skiprows=1).shape == (7, 27)


def test_verify_ident(tmp_path):
    out = tmp_path / "sweep.json"
    assert main(["verify-ident", "--graphs", "10", "--max-nodes", "5", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["graphs"] == 10 and report["unexplained_disagreements"] == []
    again = tmp_path / "again.json"
    main(["verify-ident", "--graphs", "10", "--max-nodes", "5", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()
    assert main(["verify-ident", "--max-nodes", "2"]) == 2


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["make-spec", "--experiment", "linear-d30", "--out", "x"])
    with pytest.raises(SystemExit):
        main([])
