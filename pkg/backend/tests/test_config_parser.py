import pytest

from scfde.errors import ConfigValidationError, ConfigurationError, SchemaError
from scfde.parsers.config_parser import load_config, parse_config, with_seed
from scfde.schemas import Criterion, ReceiverMode, Scheme


class TestParseConfig:
    def test_empty_gives_defaults(self):
        config = parse_config("")
        s, c, o, sim = config.system, config.channel, config.optimizer, config.simulation
        assert (s.m, s.n_s, s.n_r, s.n_d, s.n_c) == (2, 2, 2, 2, 64)
        assert (c.l_g, c.l_h, c.cp_source, c.cp_relay, c.decay) == (16, 16, 16, 16, 2.0)
        assert (o.scheme, o.criterion, o.receiver, o.n_fb) == (Scheme.JSR, Criterion.GMSE,
                                                               ReceiverMode.DECISION_FEEDBACK, 15)
        assert sim.source_snr_db == 16.0
        assert sim.relay_snr_db == [0.0, 4.0, 8.0, 12.0, 16.0, 20.0]
        assert sim.constellation == "qpsk"

    def test_override(self):
        config = parse_config("[system]\nn_c = 32\n[optimizer]\nscheme = \"epa-s\"\n")
        assert config.system.n_c == 32
        assert config.optimizer.scheme is Scheme.EPA_S

    def test_negative_feedback(self):
        with pytest.raises(ConfigValidationError) as info:
            parse_config("[optimizer]\nn_fb = -1\n")
        assert "optimizer.n_fb" in info.value.fields

    def test_unknown_key(self):
        with pytest.raises(SchemaError) as info:
            parse_config("[system]\nstreams = 2\n")
        assert info.value.key == "streams"
        assert info.value.section == "system"

    def test_unknown_section(self):
        with pytest.raises(SchemaError) as info:
            parse_config("[plot]\nx = 1\n")
        assert info.value.key == "plot"

    def test_not_toml(self):
        with pytest.raises(ConfigurationError):
            parse_config("[system\nm = 2")

    @pytest.mark.parametrize("text,field", [
        ("[system]\nm = 3\n", "system.m"),
        ("[system]\nn_c = 8\n", "channel.l_g"),
        ("[channel]\ncp_relay = 4\n", "channel.cp_relay"),
        ("[system]\nn_c = 16\n[optimizer]\nn_fb = 16\n", "optimizer.n_fb"),
    ])
    def test_cross_checks_name_the_field(self, text, field):
        with pytest.raises(ConfigValidationError) as info:
            parse_config(text)
        assert field in info.value.fields

    def test_wrong_enum(self):
        with pytest.raises(ConfigValidationError):
            parse_config("[optimizer]\ncriterion = \"minmse\"\n")


class TestSeeds:
    def test_with_seed(self):
        assert with_seed(parse_config(""), 99).simulation.seed == 99

    def test_none_keeps_seed(self):
        config = parse_config("")
        assert with_seed(config, None) is config

    def test_seed_out_of_range(self):
        with pytest.raises(ConfigValidationError):
            with_seed(parse_config(""), 2 ** 64)
        with pytest.raises(ConfigValidationError):
            parse_config("[simulation]\nseed = -1\n")


def test_load_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("[simulation]\ntrials = 3\n")
    assert load_config(path).simulation.trials == 3
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml")
