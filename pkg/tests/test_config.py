import pytest
from pydantic import ValidationError

from src.config.render_config import BenchConfig, DepthMode, OptimConfig, RenderConfig, TaaConfig
from src.config.yaml_loader import clear_config_cache, get_section, load_yaml_config, process_dict, replace_env_vars


@pytest.fixture(autouse=True)
def fresh_cache():
    clear_config_cache()
    yield
    clear_config_cache()


class TestEnvReplacement:
    def test_variable_forms(self, monkeypatch):
        monkeypatch.setenv("SPLATS_TEST_SPP", "64")
        assert replace_env_vars("$SPLATS_TEST_SPP") == "64"
        assert replace_env_vars("${SPLATS_TEST_SPP}") == "64"
        assert replace_env_vars("plain text") == "plain text"
        assert replace_env_vars(3) == 3

    def test_defaults_and_unset_variables(self, monkeypatch):
        monkeypatch.delenv("SPLATS_TEST_UNSET", raising=False)
        assert replace_env_vars("${SPLATS_TEST_UNSET:-plane}") == "plane"
        assert replace_env_vars("$SPLATS_TEST_UNSET") == "$SPLATS_TEST_UNSET"

    def test_nested_dicts_and_lists(self, monkeypatch):
        monkeypatch.setenv("SPLATS_TEST_MODE", "plane")
        processed = process_dict({"render": {"depth_mode": "$SPLATS_TEST_MODE", "spps": ["$SPLATS_TEST_MODE", 2]}})
        assert processed == {"render": {"depth_mode": "plane", "spps": ["plane", 2]}}
        assert process_dict(None) == {}


class TestYamlLoading:
    def test_missing_file_is_empty(self, tmp_path):
        assert load_yaml_config(tmp_path / "absent.yaml") == {}

    def test_sections_and_cache(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPLATS_TEST_SEED", "17")
        path = tmp_path / "conf.yaml"
        path.write_text("render:\n  spp: 8\n  pass_seed: $SPLATS_TEST_SEED\n")
        config = load_yaml_config(path)
        cfg = get_section(config, "render", RenderConfig)
        assert (cfg.spp, cfg.pass_seed) == (8, 17)
        path.write_text("render:\n  spp: 2\n")
        assert load_yaml_config(path) is config
        clear_config_cache()
        assert load_yaml_config(path)["render"]["spp"] == 2

    def test_top_level_must_be_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError):
            load_yaml_config(path)

    def test_overrides_take_precedence_unless_none(self):
        config = {"render": {"spp": 8, "depth_mode": "plane"}}
        cfg = get_section(config, "render", RenderConfig, overrides={"spp": 32, "depth_mode": None})
        assert cfg.spp == 32
        assert cfg.depth_mode is DepthMode.PLANE
        assert get_section({}, "render", RenderConfig).spp == 1
        assert get_section({"render": None}, "render", RenderConfig).tile_size == 16


class TestRenderConfig:
    @pytest.mark.parametrize(
        "value,expected",
        [(0.5, (0.5, 0.5, 0.5)), ("0.2", (0.2, 0.2, 0.2)), ("0.1, 0.2, 0.3", (0.1, 0.2, 0.3)), ((1, 0, 0), (1.0, 0.0, 0.0))],
    )
    def test_background_forms(self, value, expected):
        assert RenderConfig(background=value).background == pytest.approx(expected)

    @pytest.mark.parametrize(
        "kwargs",
        [{"spp": 0}, {"background": 1.5}, {"background": "0.1 0.2"}, {"tile_size": 0},
         {"early_stop_transmittance": 1.0}, {"pass_seed": -1}, {"depth_mode": "sorted"}],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ValidationError):
            RenderConfig(**kwargs)

    def test_depth_mode_from_string(self):
        assert RenderConfig(depth_mode="freeflight").depth_mode is DepthMode.FREE_FLIGHT

    def test_with_seed_wraps_to_64_bits(self):
        assert RenderConfig().with_seed(2**64 + 5).pass_seed == 5


class TestOtherSections:
    def test_learning_rate_groups(self):
        assert set(OptimConfig().learning_rates()) == {"positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs"}

    def test_taa_defaults(self):
        cfg = TaaConfig()
        assert cfg.tau is None
        assert (cfg.spp, cfg.reference_spp, cfg.static_frames) == (1, 1024, 64)
        with pytest.raises(ValidationError):
            TaaConfig(tau=-0.1)

    @pytest.mark.parametrize("kwargs", [{"spp_list": []}, {"spp_list": [0, 1]}, {"scales": [0.0]}, {"tile_sizes": [0]}])
    def test_bench_lists(self, kwargs):
        with pytest.raises(ValidationError):
            BenchConfig(**kwargs)

    def test_bench_renderers_from_strings(self):
        cfg = BenchConfig(renderers=["sorted"])
        assert [r.value for r in cfg.renderers] == ["sorted"]
