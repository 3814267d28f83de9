import argparse
import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest

from mfmfe.assembly import read_triplets
from mfmfe.cli import (
    TIMING_COLUMNS,
    RunConfig,
    check_element,
    main,
    parse_levels,
    run_convergence,
    run_timing,
)
from mfmfe.mesh import read_mesh
from mfmfe.verify import CSV_COLUMNS, ERROR_NAMES


def test_parse_levels():
    assert parse_levels("0..4") == (0, 4)
    assert parse_levels("2") == (2, 2)
    with pytest.raises(argparse.ArgumentTypeError):
        parse_levels("a..b")


@pytest.mark.parametrize("bad", [dict(example=3), dict(method="bdm"), dict(k=0), dict(levels=(2, 1)), dict(quad_order=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        RunConfig(**bad).validate()


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_convergence_csv_schema_and_rates(tmp_path):
    out = tmp_path / "ex1.csv"
    code = main(["convergence", "--example", "1", "--k", "2", "--levels", "0..2", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out)
    assert header == list(CSV_COLUMNS) and len(rows) == 3
    col = {c: i for i, c in enumerate(header)}
    assert rows[0][col["rate_u"]] == ""
    for prev, cur in zip(rows, rows[1:]):
        h0, h1 = float(prev[col["h"]]), float(cur[col["h"]])
        assert np.isclose(h0 / h1, 2.0)
        for n in ERROR_NAMES:
            e0, e1 = float(prev[col[f"err_{n}"]]), float(cur[col[f"err_{n}"]])
            assert abs(math.log(e0 / e1) / math.log(h0 / h1) - float(cur[col[f"rate_{n}"]])) < 1e-4
        assert int(cur[col["cg_iters"]]) > 0


def test_deterministic_reruns_identical(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        cfg = RunConfig(1, "mfmfe", 2, (0, 1), out=str(p), deterministic=True)
        run_convergence(cfg, stream=io.StringIO())
    (h, a), (_, b) = read_csv(paths[0]), read_csv(paths[1])
    errs = [i for i, c in enumerate(h) if c.startswith(("err_", "rate_", "cg_"))]
    assert [[r[i] for i in errs] for r in a] == [[r[i] for i in errs] for r in b]


def test_rt_method_runs(tmp_path):
    recs, code = run_convergence(RunConfig(1, "rt", 2, (0, 1)), stream=io.StringIO())
    assert code == 0 and recs[0].method == "rt" and recs[1].rate_u > 1.5


def test_table_has_fitted_rates():
    s = io.StringIO()
    run_convergence(RunConfig(1, "mfmfe", 1, (0, 1)), stream=s)
    assert "least-squares rates" in s.getvalue()


def test_solver_failure_exit_code(monkeypatch):
    from mfmfe import cli
    from mfmfe.solver import ConvergenceError, SolveStats

    def fail(*a, **kw):
        raise ConvergenceError("no convergence", SolveStats(converged=False))

    monkeypatch.setattr(cli, "solve_mfmfe", fail)
    recs, code = run_convergence(RunConfig(1, "mfmfe", 2, (0, 1)), stream=io.StringIO())
    assert code == 2 and recs == []
    assert main(["convergence", "--levels", "0..0"]) == 2


def test_bad_levels_exit_code(capsys):
    assert main(["convergence", "--levels", "3..1"]) == 2
    assert "empty level range" in capsys.readouterr().err


@pytest.mark.parametrize("k,d,dim", [(1, 2, 8), (3, 2, 32), (2, 3, 81)])
def test_check_element(k, d, dim):
    s = io.StringIO()
    rep, code = check_element(k, d, stream=s)
    assert code == 0 and rep.dim == dim
    assert f"dimension              {dim}" in s.getvalue()
    assert "FAIL" not in s.getvalue()


def test_timing_columns(tmp_path):
    out = tmp_path / "t.csv"
    rows = run_timing(1, 1, (0, 1), out=str(out), stream=io.StringIO())
    header, data = read_csv(out)
    assert header == TIMING_COLUMNS and len(data) == 2
    assert math.isnan(rows[0]["mfmfe_factor"]) and rows[1]["mfmfe_factor"] > 0
    assert rows[1]["rt_cg_iters"] > 0


def test_export(tmp_path):
    prefix = str(tmp_path / "sys")
    assert main(["export", "--example", "1", "--k", "1", "--level", "0", "--out-prefix", prefix]) == 0
    mesh = read_mesh(prefix + "_mesh.txt")
    A = read_triplets(prefix + "_A.txt")
    B = read_triplets(prefix + "_B.txt")
    rhs = read_triplets(prefix + "_rhs.txt")
    assert mesh.ncells == 9 and B.shape == (9, A.shape[0]) and rhs.shape[0] == A.shape[0] + 9
    assert np.allclose(A.toarray(), A.toarray().T)


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "mfmfe", "check-element", "--k", "1", "--d", "2"],
        capture_output=True, text=True,
    )
    assert out.returncode == 0 and "PASS" in out.stdout
