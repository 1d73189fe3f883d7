import json
from dataclasses import replace

import numpy as np
import pytest

from mirrorquant.harness import (
    RECORD_COLUMNS,
    ConfigError,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    epsilon_discreteness_violations,
    frac_quantized,
    load_config,
    records_to_csv,
    train,
    u_space_bind,
    write_outputs,
)
from mirrorquant.invariants import u_space_grad_check
from mirrorquant.projections import QuantLevels

BIN = QuantLevels.binary()
TER = QuantLevels.ternary()


def _quick(**kw):
    base = dict(epochs=3, seed=0, data={"n": 400}, log_every=10,
                lr={"eta0": 0.01, "lr_scale": 0.5, "lr_interval": 20},
                beta={"beta0": 1.0, "scale": 1.2, "interval": 5, "cap": 1000.0})
    base.update(kw)
    return config_from_dict(base)


def test_u_space_bind_examples():
    u, materialize = u_space_bind(3, BIN)
    assert u.shape == (3, 2)
    np.testing.assert_array_equal(materialize(u), np.zeros(3))
    assert materialize(np.array([[0.0, 1.0]]))[0] == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_u_space_chain_rule(seed):
    assert u_space_grad_check(seed) < 1e-5


def test_frac_quantized_examples():
    assert frac_quantized(np.array([1.0, -1.0, 1.0]), BIN) == 1.0
    assert frac_quantized(np.zeros(5), BIN) == 0.0
    assert frac_quantized(np.zeros(5), TER) == 1.0
    assert frac_quantized(np.array([[0.995, 0.005], [0.5, 0.5]]), BIN, space="u") == 0.5


@pytest.mark.parametrize("opt,proj,space", [
    ("md_stable", "tanh", "w"), ("md_closed", "tanh", "w"), ("gd_proj", "tanh", "w"),
    ("md_stable", "softmax", "u"), ("md_closed", "softmax", "u"), ("gd_proj", "softmax", "u"),
    ("md_stable", "shifted_tanh", "w"), ("md_closed", "shifted_tanh", "w"),
    ("bc_ste", "sign", "w"), ("pgd", "none", "w"), ("float_ref", "none", "w"),
])
def test_every_optimizer_runs_and_quantizes(opt, proj, space):
    res = train(_quick(optimizer=opt, projection=proj, space=space))
    vec = res.quantized_vector
    assert len(res.records) > 0 and all(np.isfinite(r.train_loss) for r in res.records)
    if opt != "float_ref":
        assert set(np.unique(vec)) <= set(res.levels.levels)
    assert 0.0 <= res.final_test_acc <= 1.0


def test_adam_on_dual_path():
    res = train(_quick(optimizer="gd_proj", projection="tanh", adam={"on": "dual"}))
    assert np.isfinite(res.records[-1].train_loss)


def test_records_are_reproducible():
    a = train(_quick())
    b = train(_quick())
    assert records_to_csv(a.records) == records_to_csv(b.records)
    c = train(replace(_quick(), seed=1))
    assert records_to_csv(a.records) != records_to_csv(c.records)


def test_record_schema(tmp_path):
    res = train(_quick())
    csv_path, json_path = write_outputs(res, tmp_path)
    header = csv_path.read_text().splitlines()[0]
    assert header == ",".join(RECORD_COLUMNS)
    assert b"\r" not in csv_path.read_bytes()
    summary = json.loads(json_path.read_text())
    assert summary["final"]["fully_quantized"] is True
    assert sum(summary["weight_histogram"].values()) == summary["final"]["n_params"]


def test_final_float_reference_separates_noiseless_xor():
    res = train(config_from_dict(dict(optimizer="float_ref", projection="none", epochs=20, seed=0,
                                      data={"n": 400, "noise": 0.0},
                                      lr={"eta0": 0.01, "lr_scale": 1.0, "lr_interval": 10**6})))
    assert res.final_test_acc == 1.0


def test_epsilon_discreteness_on_trained_state():
    res = train(_quick(epochs=6))
    bad, far = epsilon_discreteness_violations(res.final_state)
    assert bad == 0


@pytest.mark.parametrize("raw,fragment", [
    ({"epochz": 3}, "epochz"),
    ({"lr": {"eta": 0.1}}, "lr.eta"),
    ({"adam": {"enabled": "yes"}}, "adam.enabled"),
    ({"epochs": 2.5}, "epochs"),
    ({"optimizer": "sgd"}, "sgd"),
    ({"space": "u"}, "softmax"),
    ({"optimizer": "bc_ste"}, "sign"),
    ({"optimizer": "float_ref"}, "none"),
    ({"projection": "tanh", "levels": [-1, 0, 1]}, "quantizes"),
    ({"beta": {"beta0": 0.5}}, "beta"),
    ({"arch": [3, 4, 2]}, "arch"),
])
def test_config_errors(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(raw)


def test_config_roundtrip(tmp_path):
    cfg = _quick(optimizer="md_stable", projection="shifted_tanh", levels=[-1, 0, 1])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(path) == cfg


def test_defaults_validate():
    assert TrainConfig().validate().projection == "tanh"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
