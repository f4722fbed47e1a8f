import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metafors.harness import cli
from metafors.harness.config import ConfigError, Experiment, load_config, resolve_config
from metafors.harness.presets import list_presets, preset_dict
from metafors.harness.results import (
    COLUMNS,
    ResultRow,
    read_results,
    summarize,
    write_results,
    write_summary,
)
from metafors.harness.runner import GroundTruthError, run_experiment
from metafors.harness.runner import test_points as grid_points

TINY = """
experiment = "LogisticBifurcation"
seed = 11
replicates = 2
methods = ["metafors", "metafors_zero_start", "interp", "nearest", "multitask", "train_on_test",
           "zero_start_library_1"]
n_test = [1, 3]
n_for = 60
eval_discard = 20

[forecaster]
n_nodes = 30
mean_in_degree = 3.0
spectral_radius = 0.2
input_strength = 2.5
bias_strength = 0.5
leakage = 0.2
alpha = 1e-6

[signal_mapper]
n_nodes = 40
mean_in_degree = 3.0
spectral_radius = 0.9
input_strength = 2.5
bias_strength = 0.5
leakage = 0.1
alpha = 1e-8

[library]
n_train = 300
n_trans = 20
n_discard = 300
n_fit = 279
[[library.families]]
system = "logistic"
count = 3
mu = [3.7, 3.8]

[test]
forecast_start = 100
[[test.families]]
system = "logistic"
mu = [3.5, 4.0]
points = [4]

[output]
bifurcation = true
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def _edit(text, old, new):
    assert old in text
    return text.replace(old, new)


class TestConfig:
    def test_loads(self, tiny):
        cfg = load_config(tiny)
        assert cfg.experiment is Experiment("LogisticBifurcation")
        assert cfg.n_test == (1, 3) and cfg.library.n_members == 3
        assert len(grid_points(cfg)) == 4

    @pytest.mark.parametrize("old,new", [
        ("seed = 11", "seed = 11\ncolour = 1"),
        ("leakage = 0.2", "leakage = 0.2\nleak = 0.3"),
        ("count = 3", "count = 3\nsize = 2"),
    ])
    def test_unknown_keys(self, tmp_path, old, new):
        path = tmp_path / "bad.toml"
        path.write_text(_edit(TINY, old, new))
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    @pytest.mark.parametrize("old,new,match", [
        ("n_fit = 279", "n_fit = 280", "n_fit"),
        ('"nearest",', '"nearest", "bogus",', "unknown method"),
        ('experiment = "LogisticBifurcation"', 'experiment = "Nope"', "unknown experiment"),
        ("n_test = [1, 3]", "n_test = [1, 200]", "n_test"),
        ('"zero_start_library_1"', '"zero_start_library_5"', "only 3 members"),
        ('"train_on_test",', '"train_on_test", "train_search",', "single-member"),
        ("forecast_start = 100", "forecast_start = 2", "forecast_start"),
        ("n_train = 300", "n_train = 250", "n_train >= 256"),
    ])
    def test_inconsistent(self, tmp_path, old, new, match):
        path = tmp_path / "bad.toml"
        path.write_text(_edit(TINY, old, new))
        with pytest.raises(ConfigError, match=match):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.toml")

    def test_preset_merge(self):
        cfg = resolve_config({"experiment": "LogisticBifurcation", "preset": "desk"}, overrides={"seed": 4})
        assert cfg.seed == 4 and cfg.replicates == 3 and cfg.n_test == (5,)
        assert cfg.forecaster.n_nodes == 500 and cfg.signal_mapper.n_nodes == 1000
        assert cfg.library.n_train == 1000 and cfg.library.n_trans == 50 and cfg.n_for == 1000
        assert len(grid_points(cfg)) == 100

    def test_cold_start_only_preset(self):
        cfg = resolve_config({"experiment": "LorenzColdStartOnly", "preset": "desk"})
        assert cfg.library.n_members == 1 and cfg.observed == (2,)
        fam = cfg.library.families[0]
        assert fam.ranges() == [(1.0, 1.0), (10.0, 10.0)]
        assert cfg.n_test == (1, 2, 5, 10, 20, 50, 100, 200)

    def test_every_preset_validates(self):
        for experiment, preset, _ in list_presets():
            resolve_config({"experiment": experiment}, preset)

    def test_paper_lorenz_grid_resolution(self):
        cfg = resolve_config({"experiment": "LorenzGrid"}, "paper")
        assert len(grid_points(cfg)) == 900

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_dict("LorenzGrid", "huge")


def _row(**kw):
    base = dict(experiment="E", method="m", replicate=0, seed=1, point=0, system="logistic", mu=3.7, a=None,
                omega_t=None, v1=None, n_test=5, noise_test=0.0, noise_train=0.0, t_valid=1.0, censored=False,
                epsilon=0.1, diverged=False, escaped=False, ks=0.2)
    base.update(kw)
    return ResultRow(**base)


class TestResults:
    def test_round_trip(self, tmp_path):
        rows = [_row(), _row(replicate=1, t_valid=0.1 + 0.2, epsilon=None, escaped=None, censored=True)]
        write_results(tmp_path / "r.csv", rows)
        text = (tmp_path / "r.csv").read_text().splitlines()
        assert text[0] == "# schema=1" and tuple(text[1].split(",")) == COLUMNS
        assert read_results(tmp_path / "r.csv") == rows

    def test_schema_required(self, tmp_path):
        (tmp_path / "r.csv").write_text(",".join(COLUMNS) + "\n")
        with pytest.raises(ValueError):
            read_results(tmp_path / "r.csv")

    def test_single_replicate(self):
        for stat in ("mean", "median"):
            (rec,) = summarize([_row(t_valid=2.5)], stat)
            assert rec["t_valid"] == 2.5 and rec["n"] == 1
        assert math.isnan(summarize([_row()], "stderr")[0]["t_valid"])

    def test_hand_oracle(self):
        rows = [_row(replicate=0, t_valid=1.0, epsilon=0.1), _row(replicate=1, t_valid=2.0, epsilon=0.2),
                _row(replicate=2, t_valid=6.0, epsilon=0.6, censored=True)]
        (mean,) = summarize(rows, "mean")
        assert mean["t_valid"] == 3.0 and mean["n_censored"] == 1 and mean["n"] == 3
        assert mean["epsilon"] == pytest.approx(0.3, rel=1e-15)
        # sample sd = sqrt(((1-3)^2 + (2-3)^2 + (6-3)^2) / 2) = sqrt(7); stderr = sqrt(7/3)
        (se,) = summarize(rows, "stderr")
        assert se["t_valid"] == pytest.approx(math.sqrt(7 / 3), rel=1e-14)
        (med,) = summarize(rows, "median")
        assert med["t_valid"] == 2.0

    def test_group_by_n_test(self):
        rows = [_row(point=p, n_test=n, t_valid=float(p + n)) for p in range(3) for n in (1, 5)]
        out = {r["n_test"]: r for r in summarize(rows, "mean", by="n_test")}
        assert out[1]["t_valid"] == 2.0 and out[5]["t_valid"] == 6.0 and out[1]["n"] == 3

    def test_mixed_experiments(self):
        with pytest.raises(ValueError, match="mix"):
            summarize([_row(), _row(experiment="F")])

    def test_escaped_fraction(self):
        rows = [_row(replicate=r, escaped=r == 0) for r in range(4)]
        assert summarize(rows)[0]["escaped_fraction"] == 0.25

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1e3), min_size=2, max_size=12))
    def test_stats_match_numpy(self, values):
        rows = [_row(replicate=k, t_valid=v) for k, v in enumerate(values)]
        assert summarize(rows, "mean")[0]["t_valid"] == pytest.approx(np.mean(values), rel=1e-12, abs=1e-12)
        assert summarize(rows, "median")[0]["t_valid"] == pytest.approx(np.median(values), rel=1e-12, abs=1e-12)
        want = np.std(values, ddof=1) / math.sqrt(len(values))
        assert summarize(rows, "stderr")[0]["t_valid"] == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_summary_header(self):
        text = write_summary(summarize([_row()]), "mean")
        assert text.startswith("# schema=1 stat=mean\n")


class TestRun:
    def test_rows_and_files(self, tiny, tmp_path):
        cfg = load_config(tiny)
        out = run_experiment(cfg, tmp_path / "out")
        rows = read_results(out.files["results"])
        # train_on_test has no row at n_test = 1.
        per_rep = 4 * (7 + 6)
        assert len(rows) == 2 * per_rep
        assert {r.method for r in rows} == set(cfg.methods)
        assert all(r.epsilon is not None and r.escaped is not None for r in rows)
        assert out.files["bifurcation"].exists() and out.files["timings"].exists()
        man = json.loads(out.files["manifest"].read_text())
        assert man["root_seed"] == 11 and len(man["replicates"]) == 2
        assert man["config"]["n_test"] == [1, 3]

    def test_canonical_order(self, tiny, tmp_path):
        rows = run_experiment(load_config(tiny), tmp_path / "o").rows
        cfg = load_config(tiny)
        m = {x: i for i, x in enumerate(cfg.methods)}
        keys = [(r.replicate, r.n_test, r.point, m[r.method]) for r in rows]
        assert keys == sorted(keys)

    def test_deterministic_across_runs_and_threads(self, tiny, tmp_path):
        cfg = load_config(tiny)
        a = run_experiment(cfg, tmp_path / "a", threads=1).files["results"].read_bytes()
        b = run_experiment(cfg, tmp_path / "b", threads=1).files["results"].read_bytes()
        c = run_experiment(cfg, tmp_path / "c", threads=3).files["results"].read_bytes()
        assert a == b == c

    def test_manifest_rerun(self, tiny, tmp_path):
        first = run_experiment(load_config(tiny), tmp_path / "a")
        again = run_experiment(load_config(first.files["manifest"]), tmp_path / "b")
        assert first.files["results"].read_bytes() == again.files["results"].read_bytes()

    def test_seed_changes_results(self, tiny, tmp_path):
        a = run_experiment(load_config(tiny), tmp_path / "a").files["results"].read_bytes()
        b = run_experiment(load_config(tiny, overrides={"seed": 12}), tmp_path / "b").files["results"].read_bytes()
        assert a != b

    def test_replicate_independent_of_count(self, tiny, tmp_path):
        two = run_experiment(load_config(tiny), tmp_path / "a").rows
        one = run_experiment(load_config(tiny, overrides={"replicates": 1}), tmp_path / "b").rows
        assert [r for r in two if r.replicate == 0] == one

    def test_ground_truth_divergence(self, tmp_path):
        path = tmp_path / "div.toml"
        path.write_text(_edit(TINY, "mu = [3.5, 4.0]", "mu = [3.5, 4.5]"))
        with pytest.raises(GroundTruthError):
            run_experiment(load_config(path), tmp_path / "o")


class TestCli:
    def test_run_and_summarize(self, tiny, tmp_path, capsys):
        assert cli.main(["run", str(tiny), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
        assert cli.main(["summarize", str(tmp_path / "o" / "results.csv"), "--stat", "median",
                         "--by", "n_test"]) == 0
        out = capsys.readouterr().out
        assert "# schema=1 stat=median" in out

    def test_env_out_dir(self, tiny, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
        assert cli.main(["run", str(tiny)]) == 0
        assert (tmp_path / "env" / "results.csv").exists()

    def test_config_error_exit(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(_edit(TINY, "n_fit = 279", "n_fit = 1"))
        assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG == 2

    def test_divergence_exit(self, tmp_path):
        path = tmp_path / "div.toml"
        path.write_text(_edit(TINY, "mu = [3.5, 4.0]", "mu = [3.5, 4.5]"))
        assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGENCE == 3

    def test_list_presets(self, capsys):
        assert cli.main(["list-presets"]) == 0
        out = capsys.readouterr().out
        assert "LorenzColdStartOnly" in out and "paper" in out

    def test_summarize_mixed(self, tmp_path):
        write_results(tmp_path / "r.csv", [_row(), _row(experiment="F")])
        assert cli.main(["summarize", str(tmp_path / "r.csv")]) == 2

    def test_shipped_configs_load(self):
        from pathlib import Path
        configs = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))
        assert configs
        for path in configs:
            load_config(path)
