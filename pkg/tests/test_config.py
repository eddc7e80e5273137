import json

import pytest

from lindpo import config as rc
from lindpo.errors import ConfigError


def test_defaults_validate():
    c = rc.validate_config({})
    assert c == rc.DEFAULTS
    cfg = rc.build_train_config(c)
    assert cfg.dpo.beta_bar == 250.0 and cfg.dpo.utility.floor_eta == 1e-2 and cfg.dpo.gamma_ema == 0.995
    assert cfg.warmup_steps == 200 and cfg.batch_size == 64 and cfg.lr == 1e-3


@pytest.mark.parametrize(
    "doc",
    [
        {"eta": 1.0},
        {"eta": 1.5},
        {"gamma": 1.01},
        {"gamma": -0.5},
        {"beta_bar": 0.0},
        {"beta_bar": -250},
        {"bogus": 1},
        {"schedule": "cosine"},
        {"hidden": []},
        {"hidden": [8, 0]},
        {"batch_size": 2.5},
        {"shared_noise": 1},
        {"lr": "fast"},
        {"lr": float("inf")},
        {"modes": "2,0,0.3,1"},
        {"t_min": 0.7},
    ],
)
def test_rejected_before_compute(doc):
    with pytest.raises(ConfigError):
        rc.validate_config(doc)


def test_paper_hparams_sets_image_scale_lr():
    assert rc.validate_config({"paper_hparams": True})["lr"] == 5e-6
    assert rc.validate_config({"paper_hparams": True, "lr": 1e-4})["lr"] == 1e-4


def test_load_config_file(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"method": "dpo", "beta_bar": 500}))
    c = rc.load_config(p, {"seed": 9})
    assert (c["method"], c["beta_bar"], c["seed"]) == ("dpo", 500.0, 9)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        rc.load_config(p)


def test_kind_follows_schedule():
    for name, kind in (("rf", "velocity"), ("vp", "epsilon"), ("ve", "score")):
        cfg = rc.build_train_config(rc.validate_config({"schedule": name}))
        assert cfg.dpo.kind.value == kind


def test_task_from_config():
    task = rc.build_task(rc.validate_config({"modes": "0,3,0.5,1;3,0,0.5,1;-3,0,0.5,0", "pairs": 10}))
    assert task.cond_dim == 3 and task.preferred_indices == [0, 1] and task.pairs == 10
