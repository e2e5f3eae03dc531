from fractions import Fraction

import pytest
import yaml

from quadpipe.config import (
    ConfigError,
    MpoConfig,
    PipelineConfig,
    config_from_dict,
    load_config,
)
from quadpipe.preference import MpoWeights, RuleReward


def full_config() -> dict:
    return {
        "preset": "vqa_full",
        "seed": 11,
        "threads": 2,
        "cache": True,
        "output_dir": "out",
        "workers": {"default": {"transport": "mock"}},
        "quality": {"threshold_mode": "percentile", "p": 30, "tau_abar": 0.05},
        "reference": {"tau_atilde": 0.1},
        "dedup": {"delta": 0.2, "target_cluster_size": 64},
        "redist": {"prior": {"cap-1": 7, "cap-2": 3}},
        "ocl": {"K": 2, "tau_cl": 0.0, "n": 3},
        "mpo": {"count": 4, "temperature": 1.2, "rule": {"kind": "exact_match"},
                "beta": 0.5, "weights": [0.7, 0.2, 0.1]},
    }


def test_preset_stage_lists():
    assert config_from_dict(full_config()).stages == [
        "quality", "reference", "dedup", "redist"]

    caption = {"preset": "caption",
               "quality": {"threshold_mode": "absolute", "tau": 0.5, "tau_abar": 0.0},
               "dedup": {"delta": 0.2}}
    assert config_from_dict(caption).stages == ["quality", "dedup"]

    custom = dict(full_config(), preset="custom", stages=["dedup", "quality"])
    assert config_from_dict(custom).stages == ["dedup", "quality"]


def test_preset_validation():
    with pytest.raises(ConfigError, match="unknown preset"):
        config_from_dict({"preset": "everything"})
    with pytest.raises(ConfigError, match="nonempty 'stages'"):
        config_from_dict({"preset": "custom"})
    with pytest.raises(ConfigError, match="unknown stages"):
        config_from_dict(dict(full_config(), preset="custom", stages=["quality", "mixup"]))
    with pytest.raises(ConfigError, match="no config section"):
        config_from_dict({"preset": "caption",
                          "quality": {"threshold_mode": "absolute", "tau": 0.5,
                                      "tau_abar": 0.0}})


def test_round_trip_preserves_digest():
    config = config_from_dict(full_config())
    again = config_from_dict(config.to_dict())
    assert again.digest() == config.digest()
    assert again.digest_material() == config.digest_material()

    custom = config_from_dict(dict(full_config(), preset="custom", stages=["quality"]))
    assert config_from_dict(custom.to_dict()).digest() == custom.digest()


def test_digest_tracks_parameters_not_runtime_knobs():
    base = config_from_dict(full_config()).digest()

    runtime = dict(full_config(), threads=8, cache="elsewhere.jsonl", output_dir="other")
    assert config_from_dict(runtime).digest() == base

    for tweak in (
        lambda o: o.__setitem__("seed", 12),
        lambda o: o["dedup"].__setitem__("delta", 0.25),
        lambda o: o["quality"].__setitem__("p", 40),
        lambda o: o["redist"]["prior"].__setitem__("cap-1", 8),
        lambda o: o.__setitem__("workers", {"default": {"transport": "mock", "seed": 5}}),
        lambda o: o.__setitem__("preset", "caption"),
    ):
        obj = full_config()
        tweak(obj)
        assert config_from_dict(obj).digest() != base


def test_run_seed_defaults_into_stage_seeds():
    config = config_from_dict(dict(full_config(), seed=42))
    assert config.dedup.seed == 42
    assert config.redist.seed == 42

    explicit = full_config()
    explicit["dedup"]["seed"] = 3
    assert config_from_dict(explicit).dedup.seed == 3


def test_ocl_tier_table_accepts_f_or_table_key():
    for key in ("f", "table"):
        obj = full_config()
        obj["ocl"] = {"K": 2, "tau_cl": 0.1, "n": 2, key: {"0": 2, "1": 1, "2": 1}}
        config = config_from_dict(obj)
        assert config.ocl.table == {0: 2, 1: 1, 2: 1}

    bad = full_config()
    bad["ocl"] = {"K": 2, "tau_cl": 0.1, "n": 2, "f": {"0": 1, "1": 2, "2": 1}}
    with pytest.raises(ConfigError):
        config_from_dict(bad)
    missing = full_config()
    missing["ocl"] = {"tau_cl": 0.1, "n": 2}
    with pytest.raises(ConfigError, match="missing required"):
        config_from_dict(missing)


def test_mpo_rule_nested_and_flat_forms():
    nested = full_config()
    nested["mpo"] = {"rule": {"kind": "numeric_tolerance", "epsilon": 0.01}}
    flat = full_config()
    flat["mpo"] = {"rule_kind": "numeric_tolerance", "rule_epsilon": 0.01}
    a = config_from_dict(nested).mpo
    b = config_from_dict(flat).mpo
    assert a == b == MpoConfig(rule_kind="numeric_tolerance", rule_epsilon=0.01)
    assert a.rule_for("3.0") == RuleReward(kind="numeric_tolerance", target="3.0",
                                           epsilon=0.01)
    assert a.weights == MpoWeights(0.8, 0.1, 0.1)


def test_mpo_rule_accepts_kind_name_shorthand():
    shorthand = full_config()
    shorthand["mpo"] = {"rule": "numeric_tolerance", "rule_epsilon": 0.01}
    assert config_from_dict(shorthand).mpo == MpoConfig(
        rule_kind="numeric_tolerance", rule_epsilon=0.01)

    bogus = full_config()
    bogus["mpo"] = {"rule": ["numeric_tolerance"]}
    with pytest.raises(ConfigError, match="mpo rule must be a mapping or a kind name"):
        config_from_dict(bogus)


def test_redist_prior_inline_and_file(tmp_path):
    config = config_from_dict(full_config())
    assert config.redist.prior.weights == {
        "cap-1": Fraction(7, 10), "cap-2": Fraction(3, 10)}

    prior_file = tmp_path / "prior.yaml"
    prior_file.write_text("cap-1: 7\ncap-2: 3\n", encoding="utf-8")
    from_file = full_config()
    from_file["redist"] = {"prior_file": "prior.yaml"}
    loaded = config_from_dict(from_file, base_dir=tmp_path)
    assert loaded.redist.prior.weights == config.redist.prior.weights

    missing = full_config()
    missing["redist"] = {"mode": "downsample_only"}
    with pytest.raises(ConfigError, match="prior"):
        config_from_dict(missing)

    not_map = full_config()
    not_map["redist"] = {"prior": [1, 2]}
    with pytest.raises(ConfigError, match="must map"):
        config_from_dict(not_map)


def test_build_gateway_shares_identical_endpoints():
    config = config_from_dict(full_config())
    gateway = config.build_gateway()
    workers = gateway.all_workers()
    assert len(workers) == 1 + config.ocl.K
    assert gateway.worker("reward") is gateway.worker("embedder")
    assert gateway.worker("reward").model_id == "mock-11"
    assert [w.model_id for w in gateway.ocl_refs] == ["mock-12", "mock-13"]

    split = full_config()
    split["workers"] = {"embedder": {"transport": "mock", "dim": 16}}
    gateway = config_from_dict(split).build_gateway()
    assert gateway.worker("embedder") is not gateway.worker("reward")
    assert gateway.worker("embedder").dim == 16
    assert len(gateway.all_workers()) == 2 + config.ocl.K

    bogus = full_config()
    bogus["workers"] = {"default": {"transport": "carrier-pigeon"}}
    from quadpipe.gateway import GatewayConfigError
    with pytest.raises(GatewayConfigError):
        config_from_dict(bogus).build_gateway()


def test_load_config_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(full_config()), encoding="utf-8")
    config = load_config(path)
    assert config.digest() == config_from_dict(full_config()).digest()

    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ConfigError, match="empty"):
        load_config(empty)


def test_config_error_cases():
    with pytest.raises(ConfigError, match="mapping"):
        config_from_dict(["not", "a", "mapping"])

    no_tau_abar = full_config()
    no_tau_abar["quality"] = {"threshold_mode": "absolute", "tau": 0.5}
    with pytest.raises(ConfigError, match="missing required"):
        config_from_dict(no_tau_abar)

    bad_value = full_config()
    bad_value["dedup"] = {"delta": 3.5}
    with pytest.raises(ConfigError, match="delta"):
        config_from_dict(bad_value)
