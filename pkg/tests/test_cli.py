import json

import pytest

from scoredist.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from scoredist.dataio import load_checkpoint, load_dataset
from scoredist.predictor import PredictorConfig, init_params


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["gen", "--out", str(out), "--n-samples", "200", "--feature-dim", "5", "--seed", "3"]) == 0
    return out


def md_row(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("n\t")]
    header, row = lines[-2].split("\t"), lines[-1].split("\t")
    return dict(zip(header[1:], map(float, row[1:])))


class TestGen:
    def test_writes_splits(self, dataset):
        train, test = load_dataset(dataset)
        assert (len(train), len(test)) == (180, 20)
        assert json.loads((dataset / "spec.json").read_text())["seed"] == 3

    def test_spec_file(self, tmp_path):
        (tmp_path / "spec.json").write_text(json.dumps({"n_samples": 30, "feature_dim": 2}))
        assert main(["gen", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "d")]) == 0
        train, test = load_dataset(tmp_path / "d")
        assert len(train) + len(test) == 30

    def test_bad_spec_field(self, tmp_path, capsys):
        (tmp_path / "spec.json").write_text(json.dumps({"n_sample": 30}))
        assert main(["gen", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path)]) == EXIT_USAGE

    def test_prints_resolved_config(self, tmp_path, capsys):
        main(["gen", "--out", str(tmp_path), "--n-samples", "10"])
        err = capsys.readouterr().err
        assert err.startswith("# gen config: ")
        assert json.loads(err.split(": ", 1)[1])["n_samples"] == 10

    def test_population(self, tmp_path):
        assert main(["gen", "--population", "50", "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "population.txt").read_text().splitlines()) == 50


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert main(["gradcheck", "--bogus"]) == EXIT_USAGE

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_no_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_bad_kind(self, dataset, tmp_path):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--loss", "mmd"]) == EXIT_USAGE


class TestTrainEval:
    def test_zero_iterations_is_fresh_init(self, dataset, tmp_path):
        code = main(["train", "--data", str(dataset), "--out", str(tmp_path), "--loss", "cjs",
                     "--max-iters", "0", "--seed", "5"])
        assert code == EXIT_OK
        params = load_checkpoint(tmp_path / "checkpoint.txt")
        assert params.equals(init_params(PredictorConfig(5, (64,), seed=5)))

    def test_artifacts_and_eval(self, dataset, tmp_path, capsys):
        code = main(["train", "--data", str(dataset), "--out", str(tmp_path), "--rs", "blend",
                     "--lambda", "0.5", "--max-iters", "40"])
        assert code == EXIT_OK
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["train_config"]["reliability_mode"] == "blend"
        assert manifest["reliability"]["threshold"] > 0
        assert len(manifest["dataset_digest"]) == 64
        log = (tmp_path / "loss_log.tsv").read_text().splitlines()
        assert log[0] == "iteration\tloss" and len(log) == 41
        capsys.readouterr()

        assert main(["eval", "--checkpoint", str(tmp_path / "checkpoint.txt"), "--data", str(dataset),
                     "--out", str(tmp_path / "md.tsv")]) == EXIT_OK
        row = md_row(capsys.readouterr().out)
        assert set(row) == {"PED", "PCE", "PJS", "PCS", "PKL", "CED", "CJS"}
        assert row["CJS"] == pytest.approx(manifest["metrics"]["test_md"]["cjs"], abs=1e-6)

    def test_rerun_is_bit_identical(self, dataset, tmp_path):
        args = ["train", "--data", str(dataset), "--max-iters", "25", "--rs", "kurtosis"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        a = load_checkpoint(tmp_path / "a" / "checkpoint.txt")
        b = load_checkpoint(tmp_path / "b" / "checkpoint.txt")
        assert a.equals(b)

    def test_echo_truth(self, dataset, capsys):
        assert main(["eval", "--data", str(dataset), "--echo-truth"]) == EXIT_OK
        row = md_row(capsys.readouterr().out)
        assert row.pop("PCE") > 0
        assert all(v == 0.0 for v in row.values())

    def test_eval_needs_checkpoint(self, dataset):
        assert main(["eval", "--data", str(dataset)]) == EXIT_USAGE

    def test_missing_data(self, tmp_path):
        assert main(["eval", "--data", str(tmp_path / "nope"), "--echo-truth"]) == EXIT_DATA

    def test_corrupt_checkpoint(self, dataset, tmp_path):
        main(["train", "--data", str(dataset), "--out", str(tmp_path), "--max-iters", "1"])
        path = tmp_path / "checkpoint.txt"
        path.write_text(path.read_text().replace("end\n", ""))
        assert main(["eval", "--checkpoint", str(path), "--data", str(dataset)]) == EXIT_DATA

    def test_diverged_training(self, dataset, tmp_path, capsys):
        code = main(["train", "--data", str(dataset), "--out", str(tmp_path), "--lr", "1e300",
                     "--momentum", "0", "--max-iters", "20"])
        assert code == EXIT_NUMERIC
        assert "diverged" in capsys.readouterr().err


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--trials", "3", "--kinds", "cjs", "ped"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "cjs\t" in out and "worst divergence error" in out

    def test_failure_exit_code(self, monkeypatch):
        import scoredist.cli as cli

        monkeypatch.setattr(cli, "check_divergences", lambda kinds, trials, seed: {k: 1.0 for k in kinds})
        assert main(["gradcheck", "--trials", "1", "--kinds", "ped"]) == EXIT_NUMERIC


class TestAnalyzeMatrix:
    def test_analyze_ava(self, tmp_path, capsys):
        main(["gen", "--population", "300", "--out", str(tmp_path)])
        with open(tmp_path / "population.txt", "a") as fh:
            fh.write("broken line\n")
        assert main(["analyze", "--data", str(tmp_path / "population.txt"), "--out", str(tmp_path / "r")]) == 0
        assert "1 malformed lines skipped" in capsys.readouterr().err
        for stem in ("mean_std_grid", "skewness_by_mean", "kurtosis_by_mean", "mean_by_skewness",
                     "median_by_skewness", "summary"):
            assert (tmp_path / "r" / f"{stem}.tsv").exists()

    def test_analyze_strict(self, tmp_path):
        (tmp_path / "ava.txt").write_text("1 2 3\n")
        assert main(["analyze", "--data", str(tmp_path / "ava.txt"), "--format", "ava", "--strict",
                     "--out", str(tmp_path / "r")]) == EXIT_DATA

    def test_analyze_samples(self, dataset, tmp_path):
        assert main(["analyze", "--data", str(dataset), "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "summary.tsv").read_text() == "valid\t200\ndegenerate\t0\n"

    def test_matrix(self, dataset, tmp_path, capsys):
        code = main(["matrix", "--data", str(dataset), "--regimes", "cjs", "cjs:kurtosis",
                     "--max-iters", "10", "--out", str(tmp_path / "m.tsv")])
        assert code == EXIT_OK
        lines = (tmp_path / "m.tsv").read_text().splitlines()
        assert [l.split("\t")[0] for l in lines] == ["loss", "CJS", "RS-CJS"]

    def test_matrix_bad_regime(self, dataset):
        assert main(["matrix", "--data", str(dataset), "--regimes", "cjs:blend"]) == EXIT_USAGE
