import json

from packer_audit.cli import main
from packer_audit.manifest import CorpusManifest
from packer_audit.util import dump_json, load_json

from conftest import make_regime_a_spec


def write_experiment_config(base, corpus_spec, out_dir="out", seed=70, iterations=2,
                            total=40, alpha=0.5, beta=0.0, gamma=0.0, delta=0.5,
                            extra_audit=()):
    dump_json(corpus_spec, base / "corpus_spec.json")
    config = {
        "seed": seed,
        "corpus": {"forge_spec": "corpus_spec.json"},
        "composition": {"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta,
                        "total": total, "iterations": iterations},
        "featurize": {"ngram_len": 6, "df_min": 0.05, "df_max": 0.95, "max_per_family": 96},
        "blackbox": {"n_trees": 10, "max_depth": 8},
        "distill": {"iterations": 3, "students": 2, "sample_fraction": 0.25, "max_depth": 6},
        "audit": {"extra_features": list(extra_audit)},
        "output_dir": out_dir,
    }
    path = base / "experiment.json"
    dump_json(config, path)
    return path


class TestForgeCommand:
    def test_valid_spec_exits_zero(self, tmp_path, capsys):
        dump_json(make_regime_a_spec(5), tmp_path / "spec.json")
        assert main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "corpus")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["samples"] == 10

    def test_malformed_spec_exits_two_with_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"seed": 1,,}')
        assert main(["forge", str(bad), str(tmp_path / "corpus")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"
        assert "line" in err and "column" in err

    def test_invalid_spec_fields_exit_two(self, tmp_path, capsys):
        dump_json({"seed": 1, "counts": {"UB": -3}, "profiles": {}}, tmp_path / "bad.json")
        assert main(["forge", str(tmp_path / "bad.json"), str(tmp_path / "corpus")]) == 2

    def test_rerun_same_seed_identical_hashes(self, tmp_path):
        dump_json(make_regime_a_spec(5), tmp_path / "spec.json")
        assert main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "c1")]) == 0
        assert main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "c2")]) == 0
        m1 = CorpusManifest.load(tmp_path / "c1/manifest.json")
        m2 = CorpusManifest.load(tmp_path / "c2/manifest.json")
        assert [e.sha256 for e in m1.entries] == [e.sha256 for e in m2.entries]


class TestStageCommands:
    def test_extract_compose_train_distill_audit(self, tmp_path, capsys):
        dump_json(make_regime_a_spec(12), tmp_path / "spec.json")
        assert main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "corpus")]) == 0
        manifest = str(tmp_path / "corpus/manifest.json")
        features = str(tmp_path / "features")
        assert main(["extract", "--manifest", manifest, "--out", features,
                     "--max-per-family", "96"]) == 0
        assert main(["compose", "--manifest", manifest, "--alpha", "0.5", "--beta", "0",
                     "--gamma", "0", "--delta", "0.5", "--total", "24",
                     "--iterations", "1", "--seed", "3",
                     "--out", str(tmp_path / "plan.json")]) == 0
        assert main(["train", "--manifest", manifest, "--features", features,
                     "--plan", str(tmp_path / "plan.json"), "--iteration", "0",
                     "--seed", "7", "--n-trees", "8",
                     "--out", str(tmp_path / "stage")]) == 0
        assert main(["distill", "--features", features,
                     "--plan", str(tmp_path / "plan.json"), "--iteration", "0",
                     "--seed", "7", "--model", str(tmp_path / "stage/model_0.json"),
                     "--n", "3", "--students", "2", "--sample-fraction", "0.3",
                     "--out", str(tmp_path / "stage")]) == 0
        assert main(["audit", "--manifest", manifest, "--features", features,
                     "--feature-sets", str(tmp_path / "stage/featureset_0.json"),
                     "--out", str(tmp_path / "stage/audit.jsonl")]) == 0
        capsys.readouterr()

    def test_audit_empty_feature_list_ok(self, tmp_path, capsys):
        dump_json(make_regime_a_spec(4), tmp_path / "spec.json")
        main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "corpus")])
        manifest = str(tmp_path / "corpus/manifest.json")
        features = str(tmp_path / "features")
        main(["extract", "--manifest", manifest, "--out", features])
        assert main(["audit", "--manifest", manifest, "--features", features,
                     "--out", str(tmp_path / "audit.jsonl")]) == 0
        assert (tmp_path / "audit.jsonl").read_text() == ""
        capsys.readouterr()

    def test_extract_single_file_corpus(self, tmp_path, capsys):
        spec = make_regime_a_spec(1)
        spec["counts"] = {"UB": 1}
        dump_json(spec, tmp_path / "spec.json")
        main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "corpus")])
        assert main(["extract", "--manifest", str(tmp_path / "corpus/manifest.json"),
                     "--out", str(tmp_path / "features"), "--df-min", "0.0", "--df-max", "1.0"]) == 0
        rows = (tmp_path / "features/features.csv").read_text().strip().splitlines()
        assert len(rows) == 2  # header + one sample
        capsys.readouterr()


class TestRunExperiment:
    def test_end_to_end_and_exit_codes(self, tmp_path, capsys):
        config = write_experiment_config(tmp_path, make_regime_a_spec(20))
        assert main(["run-experiment", str(config)]) == 0
        out = json.loads(capsys.readouterr().out)
        report = load_json(tmp_path / "out/report.json")
        assert out["experiment_id"] == report["experiment_id"]
        assert len(report["iterations"]) == 2

    def test_external_prediction_adapter(self, tmp_path, capsys):
        """Auditing an externally trained model: predictions come from a
        sample_id,label CSV, no forest is trained, distillation still runs."""
        dump_json(make_regime_a_spec(16, seed=95), tmp_path / "spec.json")
        assert main(["forge", str(tmp_path / "spec.json"), str(tmp_path / "corpus")]) == 0
        manifest = CorpusManifest.load(tmp_path / "corpus/manifest.json")
        lines = ["sample_id,label"] + [f"{e.sample_id},{e.label}" for e in manifest.entries]
        (tmp_path / "preds.csv").write_text("\n".join(lines) + "\n")
        config = {
            "seed": 12,
            "corpus": {"dir": "corpus"},
            "composition": {"alpha": 0.5, "beta": 0, "gamma": 0, "delta": 0.5,
                            "total": 32, "iterations": 2},
            "featurize": {"max_per_family": 96},
            "blackbox": {"predictions_csv": "preds.csv"},
            "distill": {"iterations": 3, "students": 2, "sample_fraction": 0.25},
            "output_dir": "out",
        }
        dump_json(config, tmp_path / "experiment.json")
        assert main(["run-experiment", str(tmp_path / "experiment.json")]) == 0
        capsys.readouterr()
        report = load_json(tmp_path / "out/report.json")
        assert not (tmp_path / "out/model_0.json").exists()
        for it in report["iterations"]:
            assert it["metrics"]["test_accuracy"] == 1.0
            assert it["feature_set"]["features"]

    def test_unreachable_corpus_exits_three(self, tmp_path, capsys):
        config = {
            "seed": 1,
            "corpus": {"dir": "missing", "manifest": "missing/manifest.json"},
            "composition": {"alpha": 0.5, "beta": 0, "gamma": 0, "delta": 0.5,
                            "total": 10, "iterations": 1},
            "output_dir": "out",
        }
        path = tmp_path / "experiment.json"
        dump_json(config, path)
        assert main(["run-experiment", str(path)]) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "IoFailure"

    def test_two_corpus_sources_exit_two(self, tmp_path, capsys):
        config = {
            "seed": 1,
            "corpus": {"forge_spec": "spec.json", "dir": "corpus"},
            "composition": {"alpha": 1.0, "beta": 0, "gamma": 0, "delta": 0,
                            "total": 10, "iterations": 1},
            "output_dir": "out",
        }
        path = tmp_path / "experiment.json"
        dump_json(config, path)
        assert main(["run-experiment", str(path)]) == 2
        capsys.readouterr()

    def test_insufficient_pool_exits_five(self, tmp_path, capsys):
        config = write_experiment_config(tmp_path, make_regime_a_spec(4), total=100)
        assert main(["run-experiment", str(config)]) == 5
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InsufficientPool"

    def test_pipeline_equivalence_with_standalone_stages(self, tmp_path, capsys):
        """Chaining the standalone stages reproduces run-experiment's report
        byte for byte."""
        config_path = write_experiment_config(tmp_path, make_regime_a_spec(16),
                                              seed=71, total=32, iterations=2)
        assert main(["run-experiment", str(config_path)]) == 0
        chained = (tmp_path / "out/report.json").read_bytes()

        # wipe the derived artifacts, keep nothing but the corpus inputs
        import shutil

        shutil.move(str(tmp_path / "out/corpus"), str(tmp_path / "corpus_copy"))
        shutil.rmtree(tmp_path / "out")
        (tmp_path / "out").mkdir()
        shutil.move(str(tmp_path / "corpus_copy"), str(tmp_path / "out/corpus"))

        manifest = str(tmp_path / "out/corpus/manifest.json")
        features = str(tmp_path / "out/features")
        plan = str(tmp_path / "out/plan.json")
        assert main(["extract", "--manifest", manifest, "--out", features,
                     "--max-per-family", "96"]) == 0
        assert main(["compose", "--manifest", manifest, "--alpha", "0.5", "--beta", "0",
                     "--gamma", "0", "--delta", "0.5", "--total", "32",
                     "--iterations", "2", "--seed", "71", "--out", plan]) == 0
        for t in ("0", "1"):
            assert main(["train", "--manifest", manifest, "--features", features,
                         "--plan", plan, "--iteration", t, "--seed", "71",
                         "--n-trees", "10", "--max-depth", "8",
                         "--out", str(tmp_path / "out")]) == 0
            assert main(["distill", "--features", features, "--plan", plan,
                         "--iteration", t, "--seed", "71",
                         "--model", str(tmp_path / f"out/model_{t}.json"),
                         "--n", "3", "--students", "2", "--sample-fraction", "0.25",
                         "--student-depth", "6",
                         "--out", str(tmp_path / "out")]) == 0
        ranked = []
        for t in ("0", "1"):
            fs = load_json(tmp_path / f"out/featureset_{t}.json")
            ranked.extend(row["name"] for row in fs["features"])
        names = sorted(set(ranked))
        audit_args = ["audit", "--manifest", manifest, "--features", features,
                      "--out", str(tmp_path / "out/audit.jsonl")]
        for name in names:
            audit_args += ["--feature", name]
        assert main(audit_args) == 0
        assert main(["report", "--config", str(config_path),
                     "--experiment-dir", str(tmp_path / "out")]) == 0
        capsys.readouterr()
        assert (tmp_path / "out/report.json").read_bytes() == chained
