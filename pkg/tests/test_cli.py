import json

import numpy as np
import pytest

from kcontact.catalog import EventCatalog, read_catalog, write_catalog
from kcontact.cli import main
from kcontact.geometry import unit_square
from kcontact.mcmc import read_chain
from kcontact.noise import GaussianNoise

HOMOGENEOUS = {"kind": "homogeneous", "params": {"rate": 20.0}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _simulate(tmp_path, name="sim", **extra):
    cfg = _write(tmp_path / f"{name}.json", {"command": "simulate", "model": HOMOGENEOUS, "out": name,
                                             "pos_sigma": 0.01, "seed": 4, **extra})
    assert main(["simulate", "--config", cfg]) == 0
    return tmp_path / name


def test_simulate_rerun_byte_identical(tmp_path):
    a = _simulate(tmp_path, "a")
    b = _simulate(tmp_path, "b")
    assert (a / "catalog.tsv").read_bytes() == (b / "catalog.tsv").read_bytes()
    assert (a / "truth.csv").read_bytes() == (b / "truth.csv").read_bytes()
    cat = read_catalog(a / "catalog.tsv", unit_square())
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["n_events"] == len(cat) and not manifest["noiseless"]
    assert manifest["catalog_hash"] == cat.digest()


def test_simulate_noiseless_flag(tmp_path):
    out = _simulate(tmp_path, "n", pos_sigma=0.0)
    assert json.loads((out / "manifest.json").read_text())["noiseless"]


def test_seed_flag_overrides(tmp_path):
    cfg = _write(tmp_path / "s.json", {"model": HOMOGENEOUS, "out": "s"})
    assert main(["--seed", "11", "simulate", "--config", cfg]) == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 11


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", {"model": HOMOGENEOUS, "colour": "red"})
    assert main(["simulate", "--config", cfg]) == 2
    assert "colour" in capsys.readouterr().err
    cfg = _write(tmp_path / "v.json", {"version": 3, "model": HOMOGENEOUS})
    assert main(["simulate", "--config", cfg]) == 2
    cfg = _write(tmp_path / "f.json", {"catalog": "x.tsv", "n_chains": 1})
    assert main(["fit", "--config", cfg]) == 2
    assert main(["fit"]) == 2


def test_missing_catalog_exit_3(tmp_path):
    cfg = _write(tmp_path / "f.json", {"catalog": "nope.tsv", "family": "homogeneous", "n_chains": 2})
    assert main(["fit", "--config", cfg]) == 3


def _fit(tmp_path, threshold, name):
    sim = _simulate(tmp_path)
    cfg = _write(tmp_path / f"{name}.json", {
        "command": "fit", "catalog": f"{sim.name}/catalog.tsv", "out": name, "family": "homogeneous",
        "n_chains": 2, "n_iter": 1500, "burn_in": 500, "adapt_at": 500, "rhat_threshold": threshold,
        "min_ess": 10, "seed": 1,
    })
    return main(["fit", "--config", cfg]), tmp_path / name


def test_fit_smoke_and_diagnose(tmp_path):
    code, out = _fit(tmp_path, 1.1, "fit")
    assert code == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"] and diag["max_rhat"] < 1.1
    chain = read_chain(out / "chain_00.csv")
    assert chain.n_draws == 1000 and chain.param_names == ("rate",)
    cfg = _write(tmp_path / "d.json", {"chains": ["fit/chain_00.csv", "fit/chain_01.csv"], "out": "d.json",
                                       "rhat_threshold": 1.1, "min_ess": 10})
    assert main(["diagnose", "--config", cfg]) == 0
    assert (tmp_path / "d.json").exists()


def test_fit_threshold_one_exits_4(tmp_path):
    code, out = _fit(tmp_path, 1.0, "strict")
    assert code == 4
    assert (out / "chain_01.csv").exists()


def _pc_setup(tmp_path, members, rate=50.0):
    n = len(members)
    cat = EventCatalog([f"m{i}" for i in range(n)], members, [GaussianNoise(0.005, 2)] * n, unit_square(),
                       labels=["c"] * n)
    write_catalog(tmp_path / "cat.tsv", cat)
    # a hand-made chain file: two chains of a fixed rate
    from kcontact.mcmc import PosteriorChain

    chain = PosteriorChain(("rate",), np.full((20, 1), rate), np.zeros(20), np.zeros((20, 3)), np.arange(20),
                           (0,), 0, 1, {})
    chain.to_csv(tmp_path / "chain.csv")


def test_pc_runs_and_bound_dominates(tmp_path):
    _pc_setup(tmp_path, [[0.4, 0.4], [0.42, 0.4], [0.41, 0.42]])
    (tmp_path / "prev.tsv").write_text("c\t0.5\n")
    cfg = _write(tmp_path / "pc.json", {"catalog": "cat.tsv", "chains": ["chain.csv"], "family": "homogeneous",
                                        "n_rep": 100, "n_mc": 256, "n_outer": 400, "n_inner": 256,
                                        "previous": "prev.tsv", "significance": 0.01})
    assert main(["pc", "--config", cfg]) == 0
    report = json.loads((tmp_path / "pc" / "pc.json").read_text())
    row = report["results"][0]
    assert row["k"] == 3 and 0 < row["pc_median"] < 1
    assert row["bound"] >= row["pc_median"] - 3 * row["bound_stderr"]
    assert (tmp_path / "pc" / "comparison.csv").exists()
    assert report["comparison"]["n_compared"] == 1


def test_pc_tiny_probability(tmp_path):
    _pc_setup(tmp_path, [[0.4, 0.4], [0.4001, 0.4]], rate=1e-6)
    cfg = _write(tmp_path / "pc.json", {"catalog": "cat.tsv", "chains": ["chain.csv"], "family": "homogeneous",
                                        "n_rep": 20, "n_mc": 64, "n_outer": 50, "n_inner": 64})
    assert main(["pc", "--config", cfg]) == 0
    row = json.loads((tmp_path / "pc" / "pc.json").read_text())["results"][0]
    assert row["pc_median"] == "<1e-16"


def test_pc_rejects_singleton_cluster(tmp_path):
    _pc_setup(tmp_path, [[0.4, 0.4]])
    cfg = _write(tmp_path / "pc.json", {"catalog": "cat.tsv", "chains": ["chain.csv"], "family": "homogeneous"})
    assert main(["pc", "--config", cfg]) == 3


def test_validate_bound_small(tmp_path):
    cfg = _write(tmp_path / "vb.json", {"out": "vb", "intensities": ["gaussian"], "sigmas": [0.01],
                                        "n_test": 5, "n_rep": 200, "n_grid": 16, "n_inner": 256, "radius": 0.03})
    assert main(["validate-bound", "--config", cfg]) == 0
    summary = json.loads((tmp_path / "vb" / "summary.json").read_text())
    assert summary["cells"][0]["dominance_violations"] == 0
    assert (tmp_path / "vb" / "bound_gaussian_sigma0.01.csv").exists()


def test_coverage_single_replicate(tmp_path):
    cfg = _write(tmp_path / "cov.json", {"out": "cov", "family": "homogeneous", "theta_star": [60.0],
                                         "n_replicates": 1, "n_chains": 2, "n_iter": 400, "burn_in": 100,
                                         "adapt_at": 100, "pos_sigma": 0.01})
    assert main(["coverage", "--config", cfg]) == 0
    assert json.loads((tmp_path / "cov" / "coverage.json").read_text())["n_replicates"] == 1


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "kcontact" in capsys.readouterr().out
