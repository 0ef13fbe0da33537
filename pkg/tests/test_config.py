from __future__ import annotations

import pytest

from clmeta.config import CorpusSpec, ModelSettings, RunConfig, merge_overrides
from clmeta.errors import ValidationError


def test_run_config_json_round_trip():
    config = RunConfig(seed=11)
    again = RunConfig.from_json(config.to_json())
    assert again == config


def test_save_load_round_trip(tmp_path):
    config = RunConfig(seed=3, corpus=CorpusSpec(num_classes=6, samples_per_class=10))
    config.save(tmp_path / "config.json")
    assert RunConfig.load(tmp_path / "config.json") == config


def test_resolved_fans_seed_into_train_and_split():
    config = RunConfig(seed=99).resolved()
    assert config.train.seed == 99
    assert config.split.seed == 99


def test_merge_overrides_dotted_paths():
    config = RunConfig()
    merged = merge_overrides(
        config, {"seed": 5, "train.variant": "V2", "corpus.num_classes": 8, "model.embed_dim": 32}
    )
    assert merged.seed == 5
    assert merged.train.variant == "V2"
    assert merged.corpus.num_classes == 8
    assert merged.model.embed_dim == 32


def test_merge_overrides_rejects_unknown_fields():
    with pytest.raises(ValidationError):
        merge_overrides(RunConfig(), {"train.nonsense": 1})
    with pytest.raises(ValidationError):
        merge_overrides(RunConfig(), {"nowhere.field": 1})


def test_merge_overrides_skips_none_values():
    merged = merge_overrides(RunConfig(), {"train.variant": None, "seed": 4})
    assert merged.train.variant == "V4"
    assert merged.seed == 4


def test_corpus_spec_validation():
    with pytest.raises(ValidationError):
        CorpusSpec(kind="parquet")
    with pytest.raises(ValidationError):
        CorpusSpec(kind="csv", path=None)


def test_model_settings_to_model_config():
    settings = ModelSettings(embed_dim=32, num_heads=4)
    cfg = settings.to_model_config(vocab_size=300, num_classes=10)
    assert cfg.encoder.vocab_size == 300
    assert cfg.encoder.embed_dim == 32
    assert cfg.num_classes == 10
