import csv
import json

import numpy as np
import pytest

from hrtf_dunet import data, experiment, sh
from hrtf_dunet.errors import ConfigError
from hrtf_dunet.nn import train

TINY_NETS = {
    "epochs": {"dunet": 1, "aegan": 1, "end_to_end": 1},
    "dunet": {"channels": [4, 8], "depth": 2},
    "aegan": {"latent": 4, "width": 4, "res_blocks": 1, "reduction": 2,
              "mbd_features": 4, "mbd_kernels": 2, "mbd_dim": 2},
}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_identity_without_noise_is_zero(tmp_path):
    cfg = experiment.config_from_dict({"n_train": 2, "n_test": 2, "snr_db": None,
                                       "methods": ["identity"]})
    experiment.run_experiment(cfg, tmp_path)
    rows = read_csv(tmp_path / "summary.csv")
    assert {r["metric"] for r in rows} == {"lsd", "ild", "itd", "csl"}
    for r in rows:
        assert abs(float(r["mean"])) < 1e-12 and float(r["sd"]) < 1e-12


@pytest.mark.parametrize("bad", [
    {"colour": "white"},
    {"synth": {"order": 3}},
    {"epochs": {"gan": 3}},
    {"dunet": {"order": 3}},
    {"methods": ["sh", "nearest"]},
    {"methods": []},
    {"metrics": ["snr"]},
    {"sparsity": [2], "methods": ["barycentric"]},
    {"sparsity": [101]},
    {"noise": "brown"},
    {"high_order": 12},
    {"dunet": {"channels": [8, 16]}},
    {"aegan": {"width": 10}},
    {"n_train": 1},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        experiment.config_from_dict(bad)


def test_sparsity_two_allowed_without_barycentric():
    cfg = experiment.config_from_dict({"sparsity": [2], "methods": ["sh"]})
    assert cfg.sparsity == (2,)


def test_load_config_and_overrides(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "n_test": 5}))
    cfg = experiment.load_config(tmp_path / "c.json", seed=7, out=None)
    assert (cfg.seed, cfg.n_test) == (7, 5)
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        experiment.load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        experiment.load_config(tmp_path / "missing.json")
    assert experiment.config_from_dict(cfg.to_dict()) == cfg


def test_seeds_are_disjoint():
    cfg = experiment.config_from_dict({})
    train_seeds = {experiment.subject_seed(cfg, "train", i) for i in range(cfg.n_train)}
    test_seeds = {experiment.subject_seed(cfg, "test", i) for i in range(cfg.n_test)}
    assert not train_seeds & test_seeds
    noise = {experiment.noise_seed(cfg, "train", i, r) for i in range(16) for r in range(2)}
    assert len(noise) == 32


def test_classical_pipeline(tmp_path):
    cfg = experiment.config_from_dict({
        "n_train": 3, "n_test": 2, "sparsity": [8, 3],
        "methods": ["identity", "kalman", "sh", "barycentric", "selection-1", "selection-2"],
    })
    written = experiment.run_experiment(cfg, tmp_path)
    assert all(p.exists() for p in written)
    rows = read_csv(tmp_path / "summary.csv")
    keys = {(r["method"], int(r["sparsity"]), r["metric"]) for r in rows}
    assert len(keys) == len(rows)
    expected = {("identity", 100), ("kalman", 100)} | {
        (m, s) for m in ("sh", "barycentric", "selection-1", "selection-2") for s in (8, 3)}
    assert {(m, s) for m, s, _ in keys} == expected
    assert all(int(r["n"]) == 2 for r in rows)
    # intermediates reload through the container readers
    clean = data.load_container(tmp_path / "data" / "test-001-clean.hrir")
    assert clean.irs.shape == (100, 2, 256)
    data.load_container(tmp_path / "data" / "test-001-noisy.hrir")
    coeffs = sh.load_coeffs(tmp_path / "coeffs" / "test-000-clean.shc")
    assert coeffs.order == 5
    assert (tmp_path / "figures" / "magnitude-test-000-sh-s3.svg").exists()
    assert json.loads((tmp_path / "config.json").read_text())["n_test"] == 2


def test_neural_pipeline_writes_checkpoints(tmp_path):
    cfg = experiment.config_from_dict(dict(
        TINY_NETS, n_train=4, n_test=2, realizations=1, sparsity=[4],
        methods=["dunet", "aegan", "hrtf-dunet"]))
    experiment.run_experiment(cfg, tmp_path)
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["aegan-s4-history.csv", "aegan-s4.ckpt", "dunet-history.csv", "dunet.ckpt",
                     "hrtf-dunet-s4-history.csv", "hrtf-dunet-s4.ckpt"]
    st = train.load_state(tmp_path / "checkpoints" / "hrtf-dunet-s4.ckpt")
    assert st.epoch == 1
    assert any(k.startswith("generator.") for k in st.params)
    rows = read_csv(tmp_path / "metrics.csv")
    assert {r["method"] for r in rows} == {"dunet", "aegan", "hrtf-dunet"}
    assert all(np.isfinite(float(r["value"])) for r in rows)
