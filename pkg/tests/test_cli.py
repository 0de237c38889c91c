import csv
import json
import subprocess
import sys

import pytest

from panelpif.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, cmd_search, main
from panelpif.config import parse_config
from panelpif.pif import draw_start
from panelpif.streams import START, make_rng

SMALL = """\
[model]
id = gompertz
[simulate]
units = 3
n_obs = 15
[algorithm]
Np_pf = 100
Nrep_pf = {nrep}
Np_if = 100
Nrep_if = 2
Nmif = 3
Np_if_u = 50
Nrep_pf_u = 2
Nmif_u = 2
[run]
seed = 7
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def cfg(tmp_path):
    return write(tmp_path, SMALL.format(nrep=3))


def test_simulate_then_filter_from_files(tmp_path, cfg):
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim")]) == EXIT_OK
    panel = tmp_path / "sim" / "panel.csv"
    assert panel.exists() and (tmp_path / "sim" / "truth.csv").exists()
    data_cfg = write(tmp_path, SMALL.format(nrep=3).replace(
        "[simulate]\nunits = 3\nn_obs = 15\n", f"[data]\npanel = {panel}\n"), "data.ini")
    out = tmp_path / "f"
    code = main(["filter", "--config", data_cfg, "--params", str(tmp_path / "sim" / "truth.csv"),
                 "--out", str(out)])
    assert code == EXIT_OK
    assert len(rows(out / "eval.csv")) == 9
    assert {r["combiner"] for r in rows(out / "summary.csv")} == {"product_of_means",
                                                                   "mean_of_products"}
    diag = rows(out / "diagnostics.csv")
    assert len(diag) == 3 * 15 * 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"eval.csv", "summary.csv", "diagnostics.csv"}


def test_single_replicate_combiners_coincide(tmp_path):
    cfg = write(tmp_path, SMALL.format(nrep=1))
    out = tmp_path / "f"
    assert main(["filter", "--config", cfg, "--out", str(out)]) == EXIT_OK
    a, b = rows(out / "summary.csv")
    assert float(a["loglik"]) == pytest.approx(float(b["loglik"]), abs=1e-12)


def test_search_outputs(tmp_path, cfg):
    out = tmp_path / "s"
    assert main(["search", "--config", cfg, "--out", str(out)]) == EXIT_OK
    est = rows(out / "estimates.csv")
    assert [r["rank"] for r in est] == ["1", "2"]
    assert float(est[0]["loglik"]) >= float(est[1]["loglik"])
    trace = rows(out / "traces" / "trace_001.csv")
    assert len(trace) == 3 * 7
    assert (out / "best.csv").exists()
    timing = json.loads((out / "timing.json").read_text())
    assert timing["workers"] == 1


def test_search_is_reproducible_across_workers(tmp_path, cfg):
    outs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert main(["search", "--config", cfg, "--workers", str(w), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for name in ("estimates.csv", "manifest.json", "traces/trace_002.csv", "best.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_profile_outputs(tmp_path, cfg):
    out = tmp_path / "p"
    code = main(["profile", "--config", cfg, "--parameter", "sigma_G", "--range", "0.05", "0.2",
                 "--points", "6", "--out", str(out)])
    assert code in (EXIT_OK, EXIT_NUMERIC)
    pts = rows(out / "profile_points.csv")
    assert len(pts) == 6 * 2
    assert sum(r["best"] == "true" for r in pts) == 6
    if code == EXIT_OK:
        s = rows(out / "profile_summary.csv")[0]
        assert float(s["lo"]) <= float(s["phi_hat"]) <= float(s["hi"])
        assert len(rows(out / "profile_curve.csv")) == 1000
        assert s["n_points"] == "6"


def test_profile_all_rows_enter_smoother(tmp_path):
    cfg = write(tmp_path, SMALL.format(nrep=2) + "[profile]\nselect = all\n")
    out = tmp_path / "p"
    code = main(["profile", "--config", cfg, "--parameter", "sigma_G", "--range", "0.05", "0.2",
                 "--points", "6", "--out", str(out)])
    if code == EXIT_OK:
        assert rows(out / "profile_summary.csv")[0]["n_points"] == "12"
    else:
        assert code == EXIT_NUMERIC


@pytest.mark.parametrize("argv_tail, text", [
    (["profile", "--parameter", "sigma_G", "--range", "0.05", "0.2", "--points", "4"], SMALL),
    (["profile", "--parameter", "tau", "--range", "0.05", "0.2"], SMALL),
    (["profile", "--parameter", "sigma_G", "--range", "0.2", "0.05"], SMALL),
    (["search"], SMALL.replace("id = gompertz", "id = gompertzz")),
    (["filter"], "[model]\nid = gompertz\n"),
    (["search"], SMALL.replace("Nmif = 3", "Nmif = -1")),
    (["simulate", "--workers", "0"], SMALL),
])
def test_configuration_errors(tmp_path, capsys, argv_tail, text):
    cfg = write(tmp_path, text.format(nrep=2))
    cmd, *rest = argv_tail
    code = main([cmd, "--config", cfg, "--out", str(tmp_path / "o"), *rest])
    assert code == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_bad_panel_file(tmp_path):
    (tmp_path / "p.csv").write_text("unit,time,Y\na,2,3\na,1,3\n")
    cfg = write(tmp_path, "[model]\nid = gompertz\n[data]\npanel = p.csv\n")
    assert main(["filter", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_numerical_failure(tmp_path):
    # every start lies outside the log domain, so no profile point has a likelihood
    text = SMALL.format(nrep=2) + "[param:r]\nstart_lo = -1\nstart_hi = -1\n"
    cfg = write(tmp_path, text)
    code = main(["profile", "--config", cfg, "--parameter", "sigma_G", "--range", "0.05", "0.2",
                 "--points", "5", "--out", str(tmp_path / "o")])
    assert code == EXIT_NUMERIC
    assert (tmp_path / "o" / "profile_points.csv").exists()
    assert "mcap_error" in json.loads((tmp_path / "o" / "manifest.json").read_text())


def test_module_entry_point(tmp_path, cfg):
    r = subprocess.run([sys.executable, "-m", "panelpif.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_single_unit_single_observation(tmp_path):
    text = SMALL.format(nrep=2).replace("units = 3\nn_obs = 15", "units = 1\nn_obs = 1")
    out = tmp_path / "o"
    assert main(["simulate", "--config", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert len(rows(out / "panel.csv")) == 1


def test_simulate_rerun_identical(tmp_path, cfg):
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "panel.csv").read_bytes() == (tmp_path / "b" / "panel.csv").read_bytes()


def test_params_missing_a_parameter(tmp_path, cfg, capsys):
    (tmp_path / "p.csv").write_text("K,shared,1,log\nr,shared,0.1,log\nsigma_G,shared,0.1,log\n"
                                    "X_0,shared,1,log\n")
    code = main(["filter", "--config", cfg, "--params", str(tmp_path / "p.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "tau" in capsys.readouterr().err


def test_zero_iterations_rank_by_evaluation(tmp_path):
    text = SMALL.format(nrep=2).replace("Nmif = 3", "Nmif = 1").replace("Nrep_if = 2", "Nrep_if = 3")
    cfg = parse_config(text)
    cfg.algorithm["Nmif"] = 0
    cfg.marginal = False
    out = tmp_path / "o"
    out.mkdir()
    assert cmd_search(cfg, out, seed=4) == EXIT_OK
    est = rows(out / "estimates.csv")
    starts = {int(r["replicate"]): r for r in est}
    for r in range(3):
        s = draw_start(cfg.base_parameters(3), cfg.box(), make_rng(4, START, r))
        assert float(starts[r + 1]["r"]) == pytest.approx(s.shared["r"], rel=1e-12)
    ll = [float(r["loglik"]) for r in est]
    assert ll == sorted(ll, reverse=True)


def test_rerun_from_manifest(tmp_path, cfg):
    out = tmp_path / "a"
    assert main(["search", "--config", cfg, "--seed", "11", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    again = write(tmp_path, manifest["config"], "again.ini")
    out2 = tmp_path / "b"
    assert main(["search", "--config", again, "--seed", str(manifest["seed"]),
                 "--out", str(out2)]) == EXIT_OK
    assert json.loads((out2 / "manifest.json").read_text())["outputs"] == manifest["outputs"]
