import json

import pytest

from cospeech.config import DEFAULTS, load_config
from cospeech.errors import ConfigError


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config()
        assert cfg == DEFAULTS
        assert cfg is not DEFAULTS  # deep copy, caller may mutate

    def test_partial_file_merged(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"epochs": 3}, "seed": 7}))
        cfg = load_config(p)
        assert cfg["train"]["epochs"] == 3
        assert cfg["train"]["batch_size"] == DEFAULTS["train"]["batch_size"]
        assert cfg["seed"] == 7

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"trian": {"epochs": 3}}))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_unknown_nested_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"epoch": 3}}))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_scalar_where_section_expected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": 5}))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_non_object_root(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(p)


class TestOverrides:
    def test_dotted_override_parses_json_value(self):
        cfg = load_config(overrides=("train.lr=0.01", "train.epochs=5"))
        assert cfg["train"]["lr"] == 0.01
        assert cfg["train"]["epochs"] == 5

    def test_string_fallback(self):
        cfg = load_config(overrides=("diffusion.kind=cosine",))
        assert cfg["diffusion"]["kind"] == "cosine"

    def test_bool_and_list_values(self):
        cfg = load_config(overrides=("rag.t_emb_per_block=false",
                                     "data.beat_period=[0.4, 1.0]"))
        assert cfg["rag"]["t_emb_per_block"] is False
        assert cfg["data"]["beat_period"] == [0.4, 1.0]

    def test_top_level_override(self):
        assert load_config(overrides=("seed=42",))["seed"] == 42

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            load_config(overrides=("train.lr",))

    def test_unknown_path(self):
        with pytest.raises(ConfigError):
            load_config(overrides=("train.momentum=0.9",))
        with pytest.raises(ConfigError):
            load_config(overrides=("optim.lr=0.1",))

    def test_override_applied_after_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"epochs": 3}}))
        cfg = load_config(p, overrides=("train.epochs=9",))
        assert cfg["train"]["epochs"] == 9
