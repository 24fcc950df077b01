# tests/test_config.py
# Tests for environment and file based settings

import pytest

import config
from dmpc.errors import ConfigError


class TestEnvironment:
    def test_defaults(self, monkeypatch):
        """Test unset variables fall back to the defaults."""
        monkeypatch.delenv("DMPC_SEED", raising=False)
        assert config._from_env("seed") == 0
        assert config._from_env("cs") == 8.0

    def test_reads_variable(self, monkeypatch):
        """Test a valid variable is parsed."""
        monkeypatch.setenv("DMPC_LOG_LEVEL", "debug")
        monkeypatch.setenv("DMPC_EPSILON", "0.25")
        assert config._from_env("log_level") == "DEBUG"
        assert config._from_env("epsilon") == 0.25

    @pytest.mark.parametrize("name, value", [("DMPC_SEED", "-1"), ("DMPC_CS", "0.5"), ("DMPC_EPSILON", "x")])
    def test_invalid_value_warns(self, monkeypatch, name, value):
        """Test an invalid variable warns and keeps the default."""
        monkeypatch.setenv(name, value)
        key = name[len("DMPC_"):].lower()
        with pytest.warns(UserWarning, match=name):
            assert config._from_env(key) == config.SETTINGS[key][1]

    def test_as_dict_covers_every_setting(self):
        """Test the class view holds one value per known key."""
        assert set(config.Config.as_dict()) == set(config.SETTINGS)


class TestConfigFile:
    def test_parses_keys(self, tmp_path):
        """Test dashes, comments and blank lines are handled."""
        path = tmp_path / "a.conf"
        path.write_text("# run settings\n\nweight-scale = 100\nverify_every=3  # often\n", encoding="utf-8")
        assert config.load_config_file(path) == {"weight_scale": 100, "verify_every": 3}

    @pytest.mark.parametrize(
        "text, fragment",
        [("seed 3\n", "expected"), ("speed = 3\n", "unknown key"), ("seed = -4\n", "invalid value")],
    )
    def test_errors_name_the_line(self, tmp_path, text, fragment):
        """Test malformed lines raise ConfigError with the file and line."""
        path = tmp_path / "b.conf"
        path.write_text("cs = 8\n" + text, encoding="utf-8")
        with pytest.raises(ConfigError, match=fragment) as info:
            config.load_config_file(path)
        assert f"{path}:2:" in str(info.value)
