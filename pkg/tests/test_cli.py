import csv
import json

import numpy as np
import pytest

from pplasso import cli
from pplasso.fileio import (
    InputError,
    dump_json,
    load_json,
    read_config,
    read_csv_rows,
    read_matrix_csv,
    read_trial_csv,
    standardize_columns,
    top_variance,
)
from pplasso.simulation import Scenario, gen_data


def _write_trial(path, seed=0, p=20, extra_rows=None):
    data, _ = gen_data(Scenario(p=p, seed=seed), 0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "arm"] + [f"g{j + 1}" for j in range(p)])
        for y, t, x in zip(data.response, data.treatment, data.biomarkers):
            w.writerow([repr(float(y)), int(t)] + [repr(float(v)) for v in x])
        for row in extra_rows or []:
            w.writerow(row)
    return path


def _run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


# -- file readers --------------------------------------------------------------


def test_trial_reader_round_trip(tmp_path):
    path = _write_trial(tmp_path / "t.csv", p=12)
    data = read_trial_csv(path, "y", "arm")
    assert data.biomarker_names == [f"g{j}" for j in range(1, 13)]
    assert (data.n1, data.n2) == (50, 50)


def test_reader_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,arm,g1\n1.0,1,2.0\n1.0,2,abc\n")
    with pytest.raises(InputError, match="line 3.*'abc'"):
        read_trial_csv(path, "y", "arm")
    path.write_text("y,arm,g1\n1.0,1,2.0\n1.0,2\n")
    with pytest.raises(InputError, match="line 3: expected 3 fields, found 2"):
        read_trial_csv(path, "y", "arm")
    path.write_text("y,arm,g1\n1.0,1,nan\n")
    with pytest.raises(InputError, match="line 2: non-finite"):
        read_trial_csv(path, "y", "arm")


def test_reader_structure_errors(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("")
    with pytest.raises(InputError, match="header"):
        read_trial_csv(path, "y", "arm")
    path.write_text("y,arm,y\n1,1,1\n")
    with pytest.raises(InputError, match="duplicate"):
        read_trial_csv(path, "y", "arm")
    path.write_text("y,arm,g\n1,1,1\n2,1,2\n3,2,3\n")
    with pytest.raises(InputError, match="arm 2 has 1"):
        read_trial_csv(path, "y", "arm")
    with pytest.raises(InputError, match="no column named 'trt'"):
        read_trial_csv(path, "y", "trt")


def test_matrix_reader_reorders(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b,c\n1,0.1,0.2\n0.1,1,0.3\n0.2,0.3,1\n")
    names, S = read_matrix_csv(path, ["c", "a"])
    assert names == ["c", "a"]
    np.testing.assert_array_equal(S, [[1, 0.2], [0.2, 1]])
    with pytest.raises(InputError, match="'d'"):
        read_matrix_csv(path, ["d"])


def test_config_reader(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# defaults\nseed = 3\ntop-variance = 7  # trailing\n\n")
    assert read_config(path, {"seed", "top_variance"}) == {"seed": "3", "top_variance": "7"}
    path.write_text("sede = 3\n")
    with pytest.raises(InputError, match="unknown key 'sede'"):
        read_config(path, {"seed"})
    path.write_text("seed = 3\nseed = 4\n")
    with pytest.raises(InputError, match="twice"):
        read_config(path, {"seed"})


def test_json_round_trip(tmp_path):
    doc = {"b": np.float64(1.5), "a": [np.int64(2), np.nan], "c": {"z": True, "y": np.arange(2)}}
    path = tmp_path / "doc.json"
    dump_json(doc, path)
    assert load_json(path) == {"a": [2, None], "b": 1.5, "c": {"y": [0, 1], "z": True}}
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')


def test_standardize_and_filter():
    X = np.array([[1.0, 5.0, 0.0], [2.0, 5.0, 10.0], [3.0, 5.0, -10.0]])
    with pytest.raises(InputError, match="'g2' is constant"):
        standardize_columns(X, ["g1", "g2", "g3"])
    np.testing.assert_array_equal(top_variance(X, 2), [0, 2])
    Z = standardize_columns(X[:, [0, 2]])
    np.testing.assert_allclose(Z.std(axis=0), 1.0)


# -- fit -----------------------------------------------------------------------


def test_fit_recovers_most_actives(tmp_path):
    hits = 0
    for seed in range(5):
        src = _write_trial(tmp_path / f"d{seed}.csv", seed=seed)
        out = tmp_path / f"r{seed}.json"
        code, _ = _run(["fit", src, "--response", "y", "--treatment", "arm",
                        "--lambda-grid", 50, "--out", out])
        assert code == 0
        prog = load_json(out)["methods"]["pplasso"]["prognostic"]
        hits += len(set(prog) & {f"g{j}" for j in range(1, 11)}) >= 8
    assert hits >= 3


def test_fit_rejects_third_arm_naming_row(tmp_path, capsys):
    row = ["1.0", "3"] + ["0.5"] * 20
    src = _write_trial(tmp_path / "d.csv", extra_rows=[row])
    code, err = _run(["fit", src, "--response", "y", "--treatment", "arm",
                      "--out", tmp_path / "r.json"], capsys)
    assert code == 2
    assert "line 102" in err and "treatment value 3" in err
    assert not (tmp_path / "r.json").exists()


def test_fit_rejects_malformed_rows(tmp_path, capsys):
    src = _write_trial(tmp_path / "d.csv", extra_rows=[["1.0", "1", "x"] + ["0"] * 19])
    code, err = _run(["fit", src, "--response", "y", "--treatment", "arm",
                      "--out", tmp_path / "r.json"], capsys)
    assert code == 2 and "line 102" in err and "'x'" in err
    src = _write_trial(tmp_path / "e.csv", extra_rows=[["1.0", "1"]])
    code, err = _run(["fit", src, "--response", "y", "--treatment", "arm",
                      "--out", tmp_path / "r.json"], capsys)
    assert code == 2 and "line 102" in err


def test_fit_is_byte_identical_across_runs(tmp_path):
    src = _write_trial(tmp_path / "d.csv", p=12)
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        assert _run(["fit", src, "--response", "y", "--treatment", "arm", "--seed", 4,
                     "--lambda-grid", 20, "--out", out])[0] == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_fit_document_contents(tmp_path):
    src = _write_trial(tmp_path / "d.csv", p=12)
    out = tmp_path / "r.json"
    code, _ = _run(["fit", src, "--response", "y", "--treatment", "arm", "--lambda-grid", 15,
                    "--methods", "pplasso,lasso,elastic_net,adaptive_lasso", "--top-variance", 10,
                    "--out", out])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["input"]["p"] == 10
    fit = doc["methods"]["pplasso"]
    for key in ("prognostic", "predictive", "beta1", "beta2", "lambda", "K1", "K2", "M1", "M2",
                "covariance", "bic_table"):
        assert key in fit
    assert len(fit["bic_table"]) == 15
    assert fit["covariance"]["risk_table"]
    assert set(fit["prognostic"]) == set(fit["beta1"])
    assert 0 < doc["methods"]["elastic_net"]["alpha_mix"] < 1
    for method in ("lasso", "elastic_net", "adaptive_lasso"):
        assert "cv_mse" in doc["methods"][method]


def test_fit_with_supplied_matrix(tmp_path):
    src = _write_trial(tmp_path / "d.csv", p=12)
    sig = tmp_path / "sigma.csv"
    S = Scenario(p=12).sigma()
    with open(sig, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"g{j + 1}" for j in range(12)])
        w.writerows(S.tolist())
    out = tmp_path / "r.json"
    assert _run(["fit", src, "--response", "y", "--treatment", "arm", "--sigma", sig,
                 "--lambda-grid", 15, "--out", out])[0] == 0
    assert load_json(out)["methods"]["pplasso"]["covariance"]["estimator"] == "supplied"


def test_config_file_and_flag_precedence(tmp_path):
    src = _write_trial(tmp_path / "d.csv", p=12)
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("response = y\ntreatment = arm\nlambda-grid = 12\ndelta = 0.9\n")
    out = tmp_path / "r.json"
    assert _run(["fit", src, "--config", cfg, "--delta", 0.97, "--out", out])[0] == 0
    doc = load_json(out)
    assert doc["settings"]["lambda_grid"] == 12
    assert doc["settings"]["delta"] == 0.97


def test_unknown_config_key_rejected(tmp_path, capsys):
    src = _write_trial(tmp_path / "d.csv", p=12)
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("response = y\ntreatmnt = arm\n")
    code, err = _run(["fit", src, "--config", cfg, "--out", tmp_path / "r.json"], capsys)
    assert code == 2 and "'treatmnt'" in err


def test_invalid_option_values(tmp_path, capsys):
    src = _write_trial(tmp_path / "d.csv", p=12)
    base = ["fit", src, "--response", "y", "--treatment", "arm", "--out", tmp_path / "r.json"]
    assert _run(base + ["--delta", 1.5], capsys)[0] == 2
    assert _run(base + ["--seed", "abc"], capsys)[0] == 2
    assert _run(base + ["--methods", "ridge"], capsys)[0] == 2
    assert _run(["fit", src, "--response", "y", "--out", tmp_path / "r.json"], capsys)[0] == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    src = _write_trial(tmp_path / "d.csv", p=12)

    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(cli, "run_pplasso", broken)
    code, err = _run(["fit", src, "--response", "y", "--treatment", "arm",
                      "--out", tmp_path / "r.json"], capsys)
    assert code == 3 and "numerical failure" in err


# -- simulate ------------------------------------------------------------------


def test_simulate_writes_one_row_per_method(tmp_path):
    out, raw = tmp_path / "rep.csv", tmp_path / "raw.csv"
    code, _ = _run(["simulate", "--p", 200, "--replications", 5, "--tuning", "optimal",
                    "--lambda-grid", 20, "--out", out, "--raw", raw])
    assert code == 0
    rows = read_csv_rows(out)
    assert [r["method"] for r in rows] == list(cli.METHODS)
    assert all(r["n_ok"] == "5" for r in rows)
    assert len(read_csv_rows(raw)) == 5 * len(cli.METHODS)


def test_simulate_rejects_bad_scenario(tmp_path, capsys):
    out = tmp_path / "rep.csv"
    assert _run(["simulate", "--sigma", "banded", "--out", out], capsys)[0] == 2
    assert _run(["simulate", "--sigma", "compound", "--rho", -0.9, "--p", 20, "--out", out],
                capsys)[0] == 2
    assert _run(["simulate", "--a", "0.3,0.5", "--out", out], capsys)[0] == 2
    assert _run(["simulate", "--replications", 0, "--out", out], capsys)[0] == 2


def test_simulate_is_deterministic(tmp_path):
    argv = ["simulate", "--p", 20, "--replications", 2, "--methods", "pplasso_oracle,lasso",
            "--lambda-grid", 10, "--seed", 9]
    assert _run(argv + ["--out", tmp_path / "a.csv"])[0] == 0
    assert _run(argv + ["--out", tmp_path / "b.csv"])[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- cov-select ----------------------------------------------------------------


def _write_matrix(path, X, names=None):
    names = names or [f"v{j}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(X.tolist())
    return path


def test_cov_select_single_candidate(tmp_path):
    src = _write_matrix(tmp_path / "x.csv", np.random.default_rng(0).standard_normal((30, 5)))
    out = tmp_path / "risk.csv"
    assert _run(["cov-select", src, "--candidates", "sample", "--out", out])[0] == 0
    rows = read_csv_rows(out)
    assert len(rows) == 1 and rows[0]["estimator"] == "sample" and rows[0]["rank"] == "1"


def test_cov_select_table_sorted(tmp_path):
    X = np.random.default_rng(1).standard_normal((40, 8))
    src = _write_matrix(tmp_path / "x.csv", X)
    out = tmp_path / "risk.csv"
    assert _run(["cov-select", src, "--out", out])[0] == 0
    risks = [float(r["risk"]) for r in read_csv_rows(out)]
    assert risks == sorted(risks) and len(risks) == 9


def test_cov_select_shrinkage_ranks_above_sample(tmp_path):
    wins = 0
    for seed in range(5):
        X = np.random.default_rng(10 + seed).standard_normal((60, 50))
        src = _write_matrix(tmp_path / f"x{seed}.csv", X)
        out = tmp_path / f"r{seed}.csv"
        assert _run(["cov-select", src, "--candidates", "sample;linear-shrinkage-LW",
                     "--seed", seed, "--out", out])[0] == 0
        wins += read_csv_rows(out)[0]["estimator"] == "linear-shrinkage-LW"
    assert wins >= 3


def test_cov_select_options(tmp_path, capsys):
    X = np.random.default_rng(2).standard_normal((30, 4))
    X[:, 3] = np.repeat([1, 2], 15)
    src = _write_matrix(tmp_path / "x.csv", X, ["a", "b", "c", "arm"])
    out = tmp_path / "risk.csv"
    assert _run(["cov-select", src, "--treatment", "arm", "--exclude", "c",
                 "--candidates", "poet:k=1,lambda=0.1;hard-threshold:gamma=0.2", "--out", out])[0] == 0
    rows = read_csv_rows(out)
    assert {r["hyperparameters"] for r in rows} == {"k=1;lambda=0.1", "gamma=0.2"}
    assert _run(["cov-select", src, "--candidates", "tapering", "--out", out], capsys)[0] == 2
    assert _run(["cov-select", src, "--candidates", "hard-threshold:gamma=2", "--out", out],
                capsys)[0] == 2
    assert _run(["cov-select", src, "--exclude", "zz", "--out", out], capsys)[0] == 2
