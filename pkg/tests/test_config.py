import pytest

from jointkp.config import (DECAY_MODES, ENCODER_MODES, RunConfig,
                            apply_overrides, default_config, load_config)
from jointkp.errors import ConfigError


class TestProfiles:
    def test_desk_is_default_dataclass(self):
        cfg = default_config("desk")
        assert cfg == RunConfig()

    def test_paper_profile_pinned_values(self):
        cfg = default_config("paper")
        assert cfg.lr == 0.001
        assert cfg.beta1 == 0.9
        assert cfg.beta2 == 0.998
        assert cfg.eps == 1e-9
        assert cfg.dropout == 0.1
        assert cfg.clip_norm == 2.0
        assert cfg.filter_k == 7
        assert cfg.warmup_pke == 1000
        assert cfg.warmup_akg == 8000
        assert cfg.beam_width == 200
        assert cfg.beam_depth == 6
        assert cfg.max_len == 512
        assert cfg.d_model == 768
        assert cfg.layers == 4
        assert cfg.heads == 8

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError, match="profile"):
            default_config("gpu")

    def test_desk_profile_trains_small(self):
        cfg = default_config("desk")
        assert cfg.d_enc <= 128 and cfg.d_model <= 128
        assert cfg.beam_width <= 32


class TestFileParsing:
    def test_round_trip_with_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# comment line\n"
            "\n"
            "lr = 0.01   # inline comment\n"
            "filter.k=3\n"
            "fusion.enabled = false\n"
            "encoder.mode = trainable\n"
            "eval.ks = 1, 5, 10\n")
        cfg = load_config(str(p))
        assert cfg.lr == 0.01
        assert cfg.filter_k == 3
        assert cfg.fusion_enabled is False
        assert cfg.encoder_mode == "trainable"
        assert cfg.eval_ks == (1, 5, 10)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("lr = 0.1\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="momentum"):
            load_config(str(p))

    def test_missing_equals_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("just a line\n")
        with pytest.raises(ConfigError, match="key=value"):
            load_config(str(p))

    def test_bad_int_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("filter.k = seven\n")
        with pytest.raises(ConfigError, match="integer"):
            load_config(str(p))

    def test_bad_bool_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("tagger.crf = maybe\n")
        with pytest.raises(ConfigError, match="boolean"):
            load_config(str(p))

    @pytest.mark.parametrize("raw,expected", [
        ("true", True), ("True", True), ("1", True), ("on", True),
        ("false", False), ("0", False), ("off", False),
    ])
    def test_boolean_spellings(self, raw, expected):
        cfg = apply_overrides(RunConfig(), {"filter.enabled": raw})
        assert cfg.filter_enabled is expected

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("lr = 0.01\nseed = 7\n")
        cfg = load_config(str(p), overrides={"lr": "0.5"})
        assert cfg.lr == 0.5
        assert cfg.seed == 7

    def test_file_beats_profile(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("warmup_akg = 42\n")
        cfg = load_config(str(p), profile="paper")
        assert cfg.warmup_akg == 42
        assert cfg.warmup_pke == 1000  # untouched paper default


class TestValidation:
    def test_encoder_modes(self):
        for mode in ENCODER_MODES:
            assert apply_overrides(RunConfig(), {"encoder.mode": mode}).encoder_mode == mode
        with pytest.raises(ConfigError, match="encoder.mode"):
            apply_overrides(RunConfig(), {"encoder.mode": "frozen"})

    def test_decay_modes(self):
        for mode in DECAY_MODES:
            assert apply_overrides(RunConfig(), {"lr_decay": mode}).lr_decay == mode
        with pytest.raises(ConfigError, match="lr_decay"):
            apply_overrides(RunConfig(), {"lr_decay": "cosine"})

    def test_bad_ranges(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"filter.k": "0"})
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"beam.width": "0"})
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"dropout": "1.0"})

    def test_unknown_override_key(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            apply_overrides(RunConfig(), {"beam.temperature": "2"})


class TestDictRoundTrip:
    def test_to_from_dict(self):
        cfg = apply_overrides(default_config("paper"), {"seed": "99", "eval.ks": "3 7"})
        again = RunConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_from_dict_rejects_unknown_fields(self):
        d = RunConfig().to_dict()
        d["solver"] = "lbfgs"
        with pytest.raises(ConfigError, match="solver"):
            RunConfig.from_dict(d)
