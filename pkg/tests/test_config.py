import copy

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disclosure_mfg.config import load_run_config, run_config_from_dict
from disclosure_mfg.model import (
    Belief,
    ConfigError,
    GaussianMixtureInitial,
    MajorCost,
    Profile,
    XFunction,
    config_hash,
    load_config,
)
from disclosure_mfg.tree import validate

from .conftest import CONFIGS, congestion_model

SHIPPED = sorted(p.stem for p in CONFIGS.glob("*.toml"))


@pytest.fixture
def raw():
    return load_config(CONFIGS / "congestion.toml")


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_load_with_valid_trees(name):
    cfg = load_run_config(CONFIGS / f"{name}.toml")
    assert validate(cfg.tree()) is None
    assert cfg.grid.n_x == 201
    assert cfg.model.check_assumptions(cfg.grid.x) == []


def test_congestion_config_matches_fixture_model():
    cfg = load_run_config(CONFIGS / "congestion.toml")
    fixture = congestion_model()
    assert cfg.model.types[0].hamiltonian == fixture.types[0].hamiltonian
    assert cfg.model.types[1].major == fixture.types[1].major
    assert cfg.model.control_set == fixture.control_set


def test_hash_ignores_key_order(raw):
    shuffled = {k: raw[k] for k in reversed(list(raw))}
    assert config_hash(shuffled) == config_hash(raw)
    changed = copy.deepcopy(raw)
    changed["seed"] = 99
    assert config_hash(changed) != config_hash(raw)


@pytest.mark.parametrize(
    "edit, field",
    [
        (lambda r: r["model"].pop("prior"), "model.prior"),
        (lambda r: r["model"]["type"][0].pop("major"), "model.type[0].major"),
        (lambda r: r["model"]["type"][1]["running"].update(family="cubic"), "model.type[1].running.family"),
        (lambda r: r["model"]["type"][0]["hamiltonian"].update(colour=1.0), "model.type[0].hamiltonian.colour"),
        (lambda r: r["grid"].update(n_t=10), "grid"),
        (lambda r: r["grid"].update(init="random"), "grid.init"),
        (lambda r: r["sim"].update(n_list=[1, 8]), "sim.n_list"),
        (lambda r: r.update(plots={}), "plots"),
        (lambda r: r["tree"].update(kind="spiral"), "tree.kind"),
        (lambda r: r["tree"]["split"][1].update(at=[5]), "tree.split[1].at"),
        (lambda r: r["model"].update(prior=[0.6, 0.6]), "model.prior"),
        (lambda r: r["model"].update(alpha=2.0), "model.alpha"),
    ],
)
def test_schema_violations_name_the_field(raw, edit, field):
    edit(raw)
    with pytest.raises(ConfigError) as info:
        run_config_from_dict(raw)
    assert info.value.where == field


def test_non_positive_hamiltonian_rejected(raw):
    raw["model"]["type"][0]["hamiltonian"] = {"family": "constant", "value": -1.0}
    with pytest.raises(ConfigError, match="hamiltonian"):
        run_config_from_dict(raw)


def test_slope_outside_monotonicity_window_only_warns(raw, caplog):
    raw["model"]["type"][0]["running"] = {"family": "linear", "slope": 5.0}
    run_config_from_dict(raw)
    assert "slope range" in caplog.text


@pytest.mark.parametrize("base", [XFunction, Profile, MajorCost])
def test_every_family_round_trips_through_config(base):
    for name, klass in base.registry.items():
        obj = klass()
        assert base.from_config(obj.to_config(), "here") == obj


def test_belief_validation():
    with pytest.raises(ValueError):
        Belief.of([0.5, 0.6])
    with pytest.raises(ValueError):
        Belief.of([1.0])
    assert Belief.vertex(1, 3).weights == (0.0, 1.0, 0.0)


@given(n=st.integers(1, 50), extra=st.integers(1, 50), seed=st.integers(0, 2**32 - 1))
def test_mixture_sampling_is_prefix_stable(n, extra, seed):
    mix = GaussianMixtureInitial(weights=(0.3, 0.7), means=(-1.0, 1.0), stds=(0.5, 0.5))
    short = mix.sample(np.random.default_rng(seed), n)
    long = mix.sample(np.random.default_rng(seed), n + extra)
    assert np.array_equal(short, long[:n])
