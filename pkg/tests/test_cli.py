"""Config parsing, pipelines, exit codes, CSV formats, determinism."""

import os

import numpy as np
import pytest

from ocm import cli
from ocm.baire import GridFn

TRANSPORT = """\
# first-order transport with linear rhs
[domain]
lo = [0.0]
hi = [1.0]
cells = [10]

[system]
n = 1
K = 1
m = 1
equations = ["D(u1,(1))"]
rhs = ["x1"]

[solve]
epsilon = 0.1
refine_steps = 10
samples_per_cell = 60
margin = 0.05
seed = 42
eta = 1e-9
"""


def write_config(tmp_path, text=TRANSPORT, name="problem.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_config_fields(tmp_path):
    cfg = cli.load_config(write_config(tmp_path))
    assert cfg.lo == (0.0,) and cfg.hi == (1.0,) and cfg.cells == (10,)
    assert cfg.n == 1 and cfg.K == 1 and cfg.m == 1
    assert cfg.equations == ("D(u1,(1))",)
    assert cfg.rhs == ("x1",)
    assert cfg.epsilon == 0.1 and cfg.seed == 42 and cfg.eta == 1e-9


def test_load_config_missing_section(tmp_path):
    path = write_config(tmp_path, "[domain]\nlo = [0.0]\n")
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)


def test_load_config_bad_value_reports_line(tmp_path):
    path = write_config(tmp_path, "[domain]\nlo = what\n")
    with pytest.raises(cli.ConfigError) as exc:
        cli.load_config(path)
    assert exc.value.line == 2


def test_solve_transport(tmp_path):
    out = tmp_path / "out"
    report = cli.run_solve(write_config(tmp_path), out)
    assert report.exit_code == 0
    assert report.verdict == "pass"
    text = (out / "certificate.csv").read_text()
    lines = text.strip().splitlines()
    assert lines[0] == "component,samples,min_residual,max_residual,eps,eta,pass"
    fields = lines[1].split(",")
    assert fields[0] == "1"
    assert float(fields[3]) <= 1e-9
    assert float(fields[2]) >= -0.1 - 1e-9
    assert fields[6] == "true"
    report_text = (out / "report.txt").read_text()
    assert "cells:" in report_text and "(0.0,) (0.1,)" in report_text


def test_main_solve_exit_zero(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_malformed_expression_exits_2(tmp_path):
    bad = TRANSPORT.replace('"D(u1,(1))"', '"D(u1,(1)"')
    cfg = write_config(tmp_path, bad)
    code = cli.main(["solve", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2


def test_bad_expression_message_carries_position(tmp_path):
    bad = TRANSPORT.replace('"D(u1,(1))"', '"D(u3,(1))"')
    cfg = write_config(tmp_path, bad)
    with pytest.raises(cli.ConfigError) as exc:
        cli.run_solve(cfg, tmp_path / "o")
    assert "line 1" in str(exc.value) and "column" in str(exc.value)


def test_range_violation_exits_3(tmp_path):
    text = TRANSPORT.replace('"D(u1,(1))"', '"D(u1,(1))^2"').replace('"x1"', '"0 - 1"')
    cfg = write_config(tmp_path, text)
    assert cli.main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_sine_range_violation_exits_3(tmp_path):
    text = TRANSPORT.replace('"D(u1,(1))"', '"sin(u1)"').replace('"x1"', '"2"')
    cfg = write_config(tmp_path, text)
    assert cli.main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_delta_collapse_exits_4(tmp_path):
    text = TRANSPORT.replace('"D(u1,(1))"', '"u1"').replace('"x1"', '"10000 * x1"')
    text = text.replace("epsilon = 0.1", "epsilon = 0.01")
    cfg = write_config(tmp_path, text)
    assert cli.main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_refine_trace(tmp_path):
    out = tmp_path / "out"
    report = cli.run_refine(write_config(tmp_path), out)
    assert report.exit_code == 0
    lines = (out / "trace.csv").read_text().strip().splitlines()
    assert lines[0] == "n,eps,max_residual,min_residual,gap,repairs"
    assert len(lines) == 11
    for row in lines[1:]:
        n, eps, rmax, rmin, gap, repairs = row.split(",")
        n = int(n)
        assert float(eps) == pytest.approx(1.0 / n)
        assert float(rmax) <= 1e-9
        assert float(rmin) >= -1.0 / n - 1e-9
        assert float(gap) <= 1.0 / n + 2e-9
        assert repairs == "0"


def test_refine_single_step_matches_solve_at_eps_one(tmp_path):
    text = TRANSPORT.replace("epsilon = 0.1", "epsilon = 1.0").replace(
        "refine_steps = 10", "refine_steps = 1"
    )
    cfg = write_config(tmp_path, text)
    solve_report = cli.run_solve(cfg, tmp_path / "a")
    refine_report = cli.run_refine(cfg, tmp_path / "b")
    cert = solve_report.certificate
    step = refine_report.trace.steps[0]
    assert step.eps == 1.0
    assert step.certificate.min_residual == cert.min_residual
    assert step.certificate.max_residual == cert.max_residual


def test_refine_injected_nonmonotone_exits_5(tmp_path):
    def sabotage(n, images):
        if n == 3:
            return [GridFn(g.axes, g.values - 0.5, g.mask) for g in images]
        return images

    report = cli.run_refine(write_config(tmp_path), tmp_path / "o", image_hook=sabotage)
    assert report.exit_code == 5
    assert report.trace.total_repairs > 0


def test_selfcheck_stock_passes():
    report = cli.run_selfcheck()
    assert report.exit_code == 0
    assert all(",false," not in row for row in report.rows[1:])


def test_selfcheck_broken_instance_names_axiom_4():
    import itertools

    from ocm.filters import FiniteFilter, UcsTable

    ground = frozenset(("a", "b"))
    pg = frozenset(itertools.product(ground, ground))
    asym = UcsTable(ground, (FiniteFilter(pg, frozenset([("a", "a"), ("b", "b"), ("a", "b")])),))
    report = cli.run_selfcheck(instances=[("broken", "ucs", asym)])
    assert report.exit_code == 5
    assert any("axiom (4)" in row for row in report.rows)


def test_selfcheck_empty_is_vacuous():
    report = cli.run_selfcheck(instances=[])
    assert report.exit_code == 0
    assert "insufficient" in report.verdict


def test_deterministic_outputs_across_threads(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    blobs = {}
    for threads in ("1", "4"):
        for run in range(2):
            monkeypatch.setenv("OCM_THREADS", threads)
            out = tmp_path / f"out-{threads}-{run}"
            assert cli.main(["solve", str(cfg), "--out", str(out)]) == 0
            assert cli.main(["refine", str(cfg), "--out", str(out)]) == 0
            blobs[(threads, run)] = (
                (out / "certificate.csv").read_bytes(),
                (out / "trace.csv").read_bytes(),
            )
    baseline = blobs[("1", 0)]
    for key, value in blobs.items():
        assert value == baseline, key


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("OCM_THREADS", "2")
    assert cli.worker_count() <= 2
    monkeypatch.setenv("OCM_THREADS", "0")
    with pytest.raises(cli.ConfigError):
        cli.worker_count()
    monkeypatch.delenv("OCM_THREADS")
    assert cli.worker_count() >= 1
    monkeypatch.setenv("OCM_THREADS", "junk")
    with pytest.raises(cli.ConfigError):
        cli.worker_count()
