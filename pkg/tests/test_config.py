import pytest
import yaml

from psqkd.config import (OUTPUT_ROOT_ENV, ConfigError, config_from_dict, default_config_dict, dump_config,
                          load_config, parse_override)


def with_change(dotted, value):
    data = default_config_dict()
    node = data
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return data


class TestLoading:
    def test_defaults_match_reference_point(self):
        cfg = load_config()
        ctx = cfg.rate_context()
        assert (ctx.nu, ctx.va, ctx.T, ctx.xi) == (0.2, 2.03, 0.009, 0.019)
        assert (ctx.eta_d, ctx.nu_el, ctx.n_cutoff) == (0.714, 0.064, 12)
        assert (ctx.beta, ctx.fer, ctx.a, ctx.b, ctx.symbol_rate) == (0.95, 0.15, 0.1, 0.25, 1e9)

    def test_length_sets_transmittance(self):
        data = default_config_dict()
        data["channel"] = {"xi": 0.019, "length_km": 126.56}
        cfg = config_from_dict(data)
        assert cfg.transmittance() == pytest.approx(10 ** (-0.162 * 126.56 / 10), rel=1e-12)

    def test_round_trip_keeps_hash(self, tmp_path):
        cfg = load_config(overrides={"keyrate.delta0": 0.3})
        path = tmp_path / "c.yaml"
        path.write_text(dump_config(cfg))
        again = load_config(path)
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_tampered_file_rejected(self, tmp_path):
        cfg = load_config()
        data = yaml.safe_load(dump_config(cfg))
        data["channel"]["xi"] = 0.05
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(data))
        with pytest.raises(ConfigError, match="config_hash"):
            load_config(path)

    def test_hash_ignores_output_dir(self):
        assert load_config(overrides={"output_dir": "a"}).hash() == load_config(overrides={"output_dir": "b"}).hash()
        assert load_config().hash() != load_config(overrides={"channel.xi": 0.02}).hash()

    @pytest.mark.parametrize("text", ["{not yaml", "- just\n- a list\n"])
    def test_bad_documents(self, tmp_path, text):
        path = tmp_path / "c.yaml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidation:
    def test_missing_required_field_named(self):
        data = default_config_dict()
        del data["constellation"]["nu"]
        with pytest.raises(ConfigError) as err:
            config_from_dict(data)
        assert err.value.path == "constellation.nu"

    def test_unknown_field_named(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict(with_change("keyrate.betta", 0.9))
        assert err.value.path == "keyrate.betta"

    @pytest.mark.parametrize("dotted, value", [
        ("channel.xi", "lots"),
        ("detector.n_cutoff", 2.5),
        ("detector.n_cutoff", True),
        ("keyrate.delta0_grid", [0.1, "x"]),
        ("output_dir", 3),
    ])
    def test_type_mismatch(self, dotted, value):
        with pytest.raises(ConfigError) as err:
            config_from_dict(with_change(dotted, value))
        assert err.value.path == dotted

    @pytest.mark.parametrize("dotted, value", [
        ("channel.T", 1.5),
        ("detector.eta_d", 0.0),
        ("keyrate.fer", 1.2),
        ("keyrate.a", 0.8),
        ("schema_version", 2),
        ("simulation.estimation_fraction", 0.0),
    ])
    def test_out_of_range(self, dotted, value):
        with pytest.raises(ConfigError):
            config_from_dict(with_change(dotted, value))

    def test_exactly_one_of_T_and_length(self):
        with pytest.raises(ConfigError, match="exactly one"):
            config_from_dict(with_change("channel.length_km", 10.0))

    def test_frame_errors_are_config_errors(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict(with_change("frame.rolloff", 1.5))
        assert err.value.path == "frame"


class TestOverrides:
    @pytest.mark.parametrize("text, expected", [
        ("keyrate.beta=0.9", ("keyrate.beta", 0.9)),
        ("detector.n_cutoff=4", ("detector.n_cutoff", 4)),
        ("keyrate.delta0_grid=[0.1, 0.2]", ("keyrate.delta0_grid", [0.1, 0.2])),
        ("channel.T=null", ("channel.T", None)),
    ])
    def test_parse(self, text, expected):
        assert parse_override(text) == expected

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override("keyrate.beta")

    def test_exponent_without_dot_is_a_number(self):
        key, value = parse_override("keyrate.tol_gap=1e-3")
        assert load_config(overrides={key: value}).keyrate.tol_gap == 1e-3

    def test_override_into_missing_block(self):
        cfg = load_config(overrides={"seeds.channel": 9})
        assert cfg.seeds.channel == 9


def test_output_root(monkeypatch, tmp_path):
    cfg = load_config()
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert cfg.output_path() == tmp_path / "run"
    assert cfg.output_path("x") == tmp_path / "x"
    assert cfg.output_path(tmp_path / "abs") == tmp_path / "abs"
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert str(cfg.output_path()) == "run"
