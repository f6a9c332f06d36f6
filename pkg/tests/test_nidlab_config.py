import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from grid_envs import Orientation
from nidlab_config import (
    DEFAULT_CONFIG,
    SEED_ENV_VAR,
    ablation_configs,
    build_config,
    env_spec_from_config,
    hyper_from_config,
    load_config,
    model_kind,
    resolve_seeds,
    write_effective_config,
)
from nidlab_errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class BuildConfigTests(unittest.TestCase):
    def test_defaults_are_copied(self):
        cfg = build_config()
        cfg["env"]["D"] = 99
        self.assertEqual(DEFAULT_CONFIG["env"]["D"], 12)
        self.assertEqual(cfg["model"]["lambda1"], 5e-7)
        self.assertEqual(cfg["train"]["seeds"], list(range(10)))

    def test_nested_override_keeps_siblings(self):
        cfg = build_config({"model": {"K": 8}, "env": {"apex": 4}})
        self.assertEqual(cfg["model"]["K"], 8)
        self.assertEqual(cfg["model"]["d1"], 2)
        self.assertEqual(cfg["env"]["apex"], 4)

    def test_integers_are_accepted_for_floats(self):
        self.assertEqual(build_config({"model": {"lambda1": 0}})["model"]["lambda1"], 0)

    def test_unknown_key_names_its_path(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config({"model": {"temperature": 1.0}})
        self.assertEqual(ctx.exception.code, "unknown_key")
        self.assertEqual(ctx.exception.diagnostics["key"], "model.temperature")

    def test_type_errors(self):
        for overrides in ({"env": {"D": "12"}}, {"env": {"agent": 1}}, {"model": {"K": True}}, {"env": None},
                          {"train": {"steps": None}}):
            with self.assertRaises(ConfigError) as ctx:
                build_config(overrides)
            self.assertEqual(ctx.exception.code, "invalid_type", overrides)

    def test_nullable_keys(self):
        cfg = build_config({"env": {"apex": None, "objects": ["red"]}, "ablation": {"jobs": 2}})
        self.assertIsNone(cfg["env"]["apex"])
        self.assertEqual(cfg["ablation"]["jobs"], 2)


class LoadConfigTests(unittest.TestCase):
    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config("/nonexistent/nidlab.json")
        self.assertEqual(ctx.exception.code, "missing_config")

    def test_invalid_json_reports_position(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text('{\n  "env": {\n', encoding="utf-8")
            with self.assertRaises(ConfigError) as ctx:
                load_config(path)
        self.assertEqual(ctx.exception.code, "invalid_json")
        self.assertIn("line", ctx.exception.diagnostics)

    def test_document_must_be_an_object(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "list.json"
            path.write_text("[1, 2]", encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_config(path)

    def test_shipped_configs_build(self):
        paths = sorted(CONFIG_DIR.glob("*.json"))
        self.assertGreaterEqual(len(paths), 5)
        for path in paths:
            cfg = load_config(path)
            spec = env_spec_from_config(cfg)
            hyper_from_config(cfg)
            self.assertGreaterEqual(spec.n_objects, 1, path.name)

    def test_effective_config_is_written(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_effective_config(build_config(), Path(tmp) / "run")
            self.assertEqual(json.loads(path.read_text(encoding="utf-8")), build_config())


class SeedTests(unittest.TestCase):
    def test_precedence(self):
        cfg = build_config({"train": {"seeds": [3, 4]}})
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: "7"}):
            self.assertEqual(resolve_seeds(cfg, 1), [1])
            self.assertEqual(resolve_seeds(cfg), [7])
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: ""}):
            self.assertEqual(resolve_seeds(cfg), [3, 4])

    def test_bad_environment_seed(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: "seven"}):
            with self.assertRaises(ConfigError) as ctx:
                resolve_seeds(build_config())
        self.assertEqual(ctx.exception.code, "invalid_type")

    def test_empty_seed_list(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: ""}):
            with self.assertRaises(ConfigError):
                resolve_seeds(build_config({"train": {"seeds": []}}))


class ConversionTests(unittest.TestCase):
    def test_env_spec(self):
        spec = env_spec_from_config(build_config({"env": {"preset": "valley", "agent": True}}))
        self.assertEqual(spec.orientation, Orientation.VALLEY)
        self.assertEqual(spec.name, "valley_agent")
        self.assertEqual(spec.apex, 6)

    def test_env_errors_become_config_errors(self):
        with self.assertRaises(ConfigError) as ctx:
            env_spec_from_config(build_config({"env": {"preset": "hill"}}))
        self.assertEqual(ctx.exception.code, "invalid_value")
        self.assertEqual(ctx.exception.diagnostics["cause"], "unknown_preset")

    def test_hyper(self):
        cfg = build_config({"model": {"K": 9}, "train": {"steps": 100}})
        hyper = hyper_from_config(cfg, seed=3)
        self.assertEqual((hyper.K, hyper.steps, hyper.seed), (9, 100, 3))
        with self.assertRaises(ConfigError):
            hyper_from_config(build_config({"model": {"K": 0}}))

    def test_model_kind(self):
        cfg = build_config()
        self.assertEqual(model_kind(cfg), "nid")
        self.assertEqual(model_kind(cfg, "conv3"), "conv3")
        with self.assertRaises(ConfigError):
            model_kind(cfg, "transformer")

    def test_ablation_presets(self):
        self.assertEqual(len(ablation_configs(build_config())), 16)
        self.assertEqual(len(ablation_configs(build_config({"ablation": {"preset": "full"}}))), 720)
        with self.assertRaises(ConfigError):
            ablation_configs(build_config({"ablation": {"preset": "huge"}}))
        with self.assertRaises(ConfigError):
            ablation_configs(build_config({"ablation": {"seeds": []}}))


if __name__ == "__main__":
    unittest.main()
