import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import dpfmix
from dpfmix import cli
from dpfmix.accountant import clt_mu
from dpfmix.io import FeatureDataset, save_dataset
from dpfmix.release import load_released, verify_manifest


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture()
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, 400)
    means = rng.standard_normal((4, 6))
    x = means[labels] + 0.5 * rng.standard_normal((400, 6))
    paths = {}
    for name, sl in (("train", slice(0, 200)), ("test", slice(200, 400))):
        paths[name] = tmp_path / f"{name}.csv"
        save_dataset(FeatureDataset(x[sl], np.eye(4)[labels[sl]]), paths[name])
    return paths


def test_calibrate_eps_delta(capsys):
    code, out, _ = run(capsys, "calibrate", "--n", 50000, "--m", 64, "--T", 50000,
                       "--eps", 2, "--delta", 1e-5)
    assert code == 0
    report = json.loads(out)
    assert report["mu"] == pytest.approx(0.5016, abs=1e-4)
    assert clt_mu(50000, 64, 50000, report["sigma_x"], report["sigma_y"]) == pytest.approx(
        report["mu"], rel=1e-10)
    assert report["version"] == dpfmix.__version__
    assert {"sigma_x_eff", "sigma_y_eff", "epsdelta", "config"} <= set(report)


@pytest.mark.parametrize("budget,code", [(["--mu", 0], 5), (["--mu", -1], 5),
                                         (["--eps", 1], 2), ([], 2),
                                         (["--mu", 1, "--eps", 1, "--delta", 1e-5], 2),
                                         (["--eps", 0, "--delta", 1e-5], 5)])
def test_calibrate_budget_errors(capsys, budget, code):
    got, _, err = run(capsys, "calibrate", "--n", 100, "--m", 4, "--T", 100, *budget)
    assert got == code
    assert "error" in err


def test_usage_errors(capsys):
    assert run(capsys, "calibrate", "--mu", 1)[0] == 2
    assert run(capsys, "calibrate", "--bogus", 1)[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "--help")[0] == 0


def test_config_layering(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n": 1000, "m": 10, "T": 1000, "mu": 1.0, "C_x": 3.0}))
    code, out, _ = run(capsys, "calibrate", "--config", conf, "--mu", 2.0)
    assert code == 0
    report = json.loads(out)
    assert report["mu"] == 2.0 and report["config"]["C_x"] == 3.0
    # a previous report works as a config file
    (tmp_path / "r.json").write_text(out)
    code, out2, _ = run(capsys, "calibrate", "--config", tmp_path / "r.json")
    assert code == 0 and json.loads(out2) == report


def test_config_errors(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n": 1000, "mm": 3}))
    code, _, err = run(capsys, "calibrate", "--config", conf)
    assert code == 5 and "mm" in err
    conf.write_text("{not json")
    assert run(capsys, "calibrate", "--config", conf)[0] == 3
    assert run(capsys, "calibrate", "--config", tmp_path / "missing.json")[0] == 3
    conf.write_text(json.dumps({"n": "many", "m": 4, "T": 10, "mu": 1.0}))
    assert run(capsys, "calibrate", "--config", conf)[0] == 5


def test_release_deterministic_and_guarded(tmp_path, dataset, capsys):
    args = ["release", "--input", dataset["train"], "--m", 16, "--T", 50, "--eps", 1,
            "--delta", 1e-5, "--seed", 7]
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run(capsys, *args, "--output", a)[0] == 0
    assert run(capsys, *args, "--output", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.bin.manifest.json").read_text())
    assert verify_manifest(manifest)
    assert manifest["seed"] == 7 and manifest["config"]["m"] == 16
    code, _, err = run(capsys, *args, "--output", a)
    assert code == 2 and "--force" in err
    assert run(capsys, *args, "--output", a, "--force")[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_release_rerun_from_manifest(tmp_path, dataset, capsys):
    out = tmp_path / "r.csv"
    assert run(capsys, "release", "--input", dataset["train"], "--output", out, "--m", 8,
               "--T", 20, "--mu", 1.0, "--seed", 3)[0] == 0
    again = tmp_path / "again.csv"
    code = run(capsys, "release", "--config", tmp_path / "r.csv.manifest.json", "--output", again)[0]
    assert code == 0
    assert out.read_bytes() == again.read_bytes()


def test_release_errors(tmp_path, dataset, capsys):
    base = ["release", "--output", tmp_path / "o.bin", "--T", 5, "--mu", 1.0]
    assert run(capsys, *base, "--input", dataset["train"], "--m", 201)[0] == 5
    assert run(capsys, *base, "--input", tmp_path / "nope.csv", "--m", 2)[0] == 3
    assert run(capsys, *base, "--input", dataset["train"])[0] == 2


def test_sweep_outputs(tmp_path, capsys):
    grid = [2, 4, 8, 16]
    code, out, _ = run(capsys, "sweep", "--gamma", 1.0, "--n-list", "128,256,512", "--repeats", 2,
                       "--p", 5, "--m-grid", ",".join(map(str, grid)), "--out-dir", tmp_path)
    assert code == 0
    assert set(json.loads(out)) == {"slope", "intercept", "r2", "target_slope"}
    for n in (128, 256, 512):
        rows = read_csv(tmp_path / f"sweep_n{n}.csv")
        assert [int(r["m"]) for r in rows] == grid
    pts = read_csv(tmp_path / "slope_points.csv")
    assert len(pts) == 3 and list(pts[0]) == ["log2n", "log2mstar", "gamma"]
    report = json.loads((tmp_path / "slope.json").read_text())
    assert report["target_slope"] == 0.5 and report["config"]["repeats"] == 2


def test_sweep_single_n_cannot_fit(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--gamma", 1.0, "--n-list", "128", "--repeats", 1,
                       "--p", 5, "--m-grid", "2,4", "--out-dir", tmp_path)
    assert code != 0 and "3" in err
    assert (tmp_path / "sweep_n128.csv").exists()


def test_accountant_compare(tmp_path, capsys):
    out = tmp_path / "cmp.csv"
    args = ["accountant-compare", "--n", 2000, "--T", 2000, "--m-list", "1,8,64", "--output", out]
    assert run(capsys, *args)[0] == 0
    rows = read_csv(out)
    assert [int(r["m"]) for r in rows] == [1, 8, 64]
    assert all(float(r["gdp_noise"]) <= float(r["rdp_noise"]) for r in rows)
    first = out.read_bytes()
    assert run(capsys, *args)[0] == 0
    assert out.read_bytes() == first
    assert json.loads((tmp_path / "cmp.csv.manifest.json").read_text())["config"]["n"] == 2000
    assert run(capsys, "accountant-compare", "--m-list", "", "--output", out)[0] == 2


def test_clt_convergence(tmp_path, capsys):
    out = tmp_path / "clt.csv"
    assert run(capsys, "clt-convergence", "--T-list", "10,50", "--grid-size", 2001,
               "--output", out)[0] == 0
    rows = read_csv(out)
    assert float(rows[0]["linf_err"]) > float(rows[1]["linf_err"])


def test_train_eval(tmp_path, dataset, capsys):
    rel = tmp_path / "rel.bin"
    assert run(capsys, "release", "--input", dataset["train"], "--output", rel, "--m", 200,
               "--T", 300, "--mu", 1e-6, "--seed", 1)[0] == 0
    metrics = tmp_path / "m.json"
    code, out, _ = run(capsys, "train-eval", "--release", rel, "--train-clean", dataset["train"],
                       "--test-clean", dataset["test"], "--epochs", 20, "--batch-size", 50,
                       "--output", metrics, "--model-out", tmp_path / "w.bin")
    assert code == 0
    got = json.loads(metrics.read_text())
    assert set(got) == {"accuracy", "gap", "auc"}
    assert 0 <= got["auc"] <= 1
    # the release is pure noise, so the model is no better than chance (25%) by much
    assert got["accuracy"] < 45
    assert (tmp_path / "w.bin.json").exists()
    assert json.loads((tmp_path / "m.json.manifest.json").read_text())["metrics"] == got


def test_train_eval_missing_file(tmp_path, dataset, capsys):
    code = run(capsys, "train-eval", "--release", tmp_path / "none.bin", "--train-clean",
               dataset["train"], "--test-clean", dataset["test"], "--output", tmp_path / "m.json")[0]
    assert code == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dpfmix", "calibrate", "--n", "100", "--m", "4",
                           "--T", "100", "--mu", "1"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["mu"] == 1.0
    proc = subprocess.run([sys.executable, "-m", "dpfmix", "calibrate", "--mu", "0", "--n", "1",
                           "--m", "1", "--T", "1"], capture_output=True, text=True)
    assert proc.returncode == 5 and "non-positive budget" in proc.stderr


def test_release_no_noise(tmp_path, dataset, capsys):
    args = ["release", "--input", dataset["train"], "--m", 8, "--T", 30, "--mu", 1.0, "--seed", 2]
    assert run(capsys, *args, "--output", tmp_path / "n.bin")[0] == 0
    assert run(capsys, *args, "--output", tmp_path / "c.bin", "--no-noise")[0] == 0
    noisy = load_released(tmp_path / "n.bin")
    clean = load_released(tmp_path / "c.bin")
    assert clean.manifest["noise_disabled"] and not noisy.manifest.get("noise_disabled")
    # same subsets, so the difference is the noise alone
    diff = noisy.features - clean.features
    assert 0.5 < diff.std() / noisy.manifest["sigma_x_eff"] < 1.5
    assert np.all(np.linalg.norm(clean.features, axis=1) <= 1.0 + 1e-12)


def test_sweep_no_fit_single_n(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--gamma", 1.0, "--n-list", "128", "--repeats", 1,
                       "--p", 5, "--m-grid", "2,4,8", "--out-dir", tmp_path, "--no-fit")
    assert code == 0
    assert json.loads(out) == {"128": json.loads((tmp_path / "sweep.json").read_text())
                               ["sweeps"]["128"]["m_star"]}
    assert not (tmp_path / "slope.json").exists()
