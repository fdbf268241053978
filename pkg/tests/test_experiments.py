import pytest

from gulfopt.exceptions import ConfigurationError
from gulfopt.experiments import config_to_dict, parse_config, run_experiment


def base_config(tmp_path, method="base", **extra):
    doc = {
        "method": method,
        "dataset": {
            "synthetic": {
                "generator": "gaussian-blobs",
                "num_classes": 2,
                "examples_per_class": 60,
                "input_dim": 4,
                "class_separation": 3.0,
                "label_noise": 0.0,
                "seed": 5,
            }
        },
        "architecture": {"input_dim": 4, "hidden_dims": [6], "output_dim": 2, "activation": "relu"},
        "loss": "cross_entropy",
        "sgd": {
            "lr": 0.1,
            "momentum": 0.9,
            "weight_decay": 0.001,
            "batch_size": 32,
            "schedule": [[4, 1.0], [2, 0.1]],
            "seed": 0,
        },
        "output_dir": str(tmp_path / "out"),
        "seeds": [1],
    }
    doc.update(extra)
    return doc


class TestConfigRoundTrip:
    def test_parse_serialize_parse_identity(self, tmp_path):
        doc = base_config(tmp_path, method="gulf2",
                          gulf={"alpha": 0.3, "stages": 2, "init": "random", "m": 1, "v": 2.0})
        cfg = parse_config(doc)
        again = parse_config(config_to_dict(cfg))
        assert config_to_dict(cfg) == config_to_dict(again)

    def test_method_validation(self, tmp_path):
        with pytest.raises(ConfigurationError):
            parse_config(base_config(tmp_path, method="magic"))
        with pytest.raises(ConfigurationError):
            parse_config(base_config(tmp_path, method="gulf2"))  # missing gulf section
        with pytest.raises(ConfigurationError):
            parse_config(base_config(tmp_path, method="label-smooth"))  # missing epsilon


class TestRunExperiment:
    def test_base_artifacts(self, tmp_path):
        cfg = parse_config(base_config(tmp_path))
        summary = run_experiment(cfg)
        out = tmp_path / "out"
        assert (out / "summary.json").exists()
        seed_dir = out / "seed_1"
        assert (seed_dir / "stage_1.json").exists()
        assert not (seed_dir / "stage_2.json").exists()
        traj = (seed_dir / "trajectory.csv").read_text().splitlines()
        assert len(traj) == 2  # header + one row
        for name in ("loss_path.png", "reg_alpha_loss.png", "param_norm_path.png"):
            assert (seed_dir / name).exists()
        assert summary["per_seed"][0]["seed"] == 1

    def test_gulf_artifacts_and_counts(self, tmp_path):
        cfg = parse_config(base_config(
            tmp_path, method="gulf2", seeds=[1, 2],
            gulf={"alpha": 0.3, "stages": 2, "init": "base"},
        ))
        summary = run_experiment(cfg)
        for seed in (1, 2):
            seed_dir = tmp_path / "out" / f"seed_{seed}"
            assert (seed_dir / "stage_1.json").exists()
            assert (seed_dir / "stage_2.json").exists()
            assert (seed_dir / "base_model.json").exists()
            rows = (seed_dir / "trajectory.csv").read_text().splitlines()
            assert len(rows) == 4  # header + stages 0..2
        assert "median" in summary

    def test_refuses_overwrite_without_force(self, tmp_path):
        cfg = parse_config(base_config(tmp_path))
        run_experiment(cfg)
        with pytest.raises(ConfigurationError):
            run_experiment(cfg)
        run_experiment(cfg, force=True)

    def test_rerun_bitwise_identical(self, tmp_path):
        doc = base_config(tmp_path, method="gulf2",
                          gulf={"alpha": 0.5, "stages": 2, "init": "random"})
        cfg = parse_config(doc)
        run_experiment(cfg, out_dir=tmp_path / "a")
        run_experiment(cfg, out_dir=tmp_path / "b")
        for name in ("seed_1/trajectory.csv", "seed_1/stage_1.json", "seed_1/stage_2.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_architecture_dataset_mismatch(self, tmp_path):
        doc = base_config(tmp_path)
        doc["architecture"]["input_dim"] = 7
        with pytest.raises(ConfigurationError):
            run_experiment(parse_config(doc))

    def test_base_lambda_alpha_method(self, tmp_path):
        cfg = parse_config(base_config(tmp_path, method="base-lambda-alpha", alpha=0.5))
        summary = run_experiment(cfg)
        assert summary["per_seed"]

    def test_label_smooth_method(self, tmp_path):
        cfg = parse_config(base_config(tmp_path, method="label-smooth", epsilon=0.1))
        summary = run_experiment(cfg)
        assert summary["per_seed"]

    def test_base_loop_method(self, tmp_path):
        cfg = parse_config(base_config(tmp_path, method="base-loop", stages=2))
        run_experiment(cfg)
        assert (tmp_path / "out" / "seed_1" / "stage_2.json").exists()
