from collections import OrderedDict

import numpy as np
import pytest

from tasaux.data import SynthConfig, generate
from tasaux.losses import LossConfig
from tasaux.model import BackboneConfig
from tasaux.trainer import (
    Adam,
    TrainConfig,
    UnknownArm,
    ablate,
    format_table,
    parse_arms,
    train,
)


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthConfig(num_videos=6, frames_min=100, frames_max=120, segments_min=3,
                                segments_max=5, feature_dim=6, num_classes=4, seed=5))


def small_cfg(**loss):
    return TrainConfig(loss=LossConfig(**{"e_start": 2, **loss}),
                       backbone=BackboneConfig(num_classes=4, input_dim=6, num_stages=2, layers_per_stage=3,
                                               hidden_width=8),
                       epochs=4, eval_every=2, lr=5e-3)


def test_training_reduces_loss(corpus):
    _, log = train(corpus, TrainConfig(**{**small_cfg().__dict__, "epochs": 8}))
    assert log.epochs[-1]["l_model"] < log.epochs[0]["l_model"]
    assert [e["epoch"] for e in log.evals] == [1, 3, 5, 7]
    assert set(log.final) >= {"acc", "edit", "f1"}


def test_runlog_reports_zero_shape_loss_during_warmup(corpus):
    _, log = train(corpus, small_cfg(lambda_S=1.0, lambda_B=1.0))
    assert [e["l_S"] for e in log.epochs[:2]] == [0.0, 0.0]
    assert all(e["l_S"] > 0 for e in log.epochs[2:])


def test_training_is_deterministic(corpus):
    p1, l1 = train(corpus, small_cfg())
    p2, l2 = train(corpus, small_cfg())
    assert l1.to_dict() == l2.to_dict()
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


@pytest.mark.parametrize("dropout", [0.0, 0.5])
def test_threaded_batches_match_serial(corpus, dropout):
    cfg = TrainConfig(**{**small_cfg().__dict__, "batch": 3})
    cfg.backbone.dropout = dropout
    p1, l1 = train(corpus, cfg, jobs=1)
    p2, l2 = train(corpus, cfg, jobs=3)
    assert l1.to_dict() == l2.to_dict()
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_epoch_callback_sees_every_epoch(corpus):
    seen = []
    train(corpus, small_cfg(), on_epoch_end=lambda e, p: seen.append(e))
    assert seen == [0, 1, 2, 3]


def test_adam_first_step_moves_by_lr():
    params = OrderedDict(w=np.array([1.0, -1.0]))
    Adam(0.1).step(params, OrderedDict(w=np.array([3.0, -0.5])))
    np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-6)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_parse_arms():
    assert [a.name for a in parse_arms("baseline,+LB,+LS,+both")] == ["baseline", "+LB", "+LS", "+both"]
    grid = parse_arms("estart:0,10,20,30")
    assert [a.name for a in grid] == ["estart:0", "estart:10", "estart:20", "estart:30"]
    assert grid[2].overrides == (("e_start", 20),)
    assert [a.name for a in parse_arms("allframes,decoupled")] == ["allframes", "decoupled"]
    for bad in ("nonsense", "baseline,7", "estart:x", ""):
        with pytest.raises(UnknownArm):
            parse_arms(bad)


def test_arm_overrides():
    base = small_cfg(lambda_B=0.3, lambda_S=0.2)
    arms = {a.name: a.apply(base) for a in parse_arms("baseline,+LB,+LS,+both")}
    assert (arms["baseline"].loss.lambda_B, arms["baseline"].loss.lambda_S) == (0.0, 0.0)
    assert (arms["+LB"].loss.lambda_B, arms["+LB"].loss.lambda_S) == (0.3, 0.0)
    assert (arms["+LS"].loss.lambda_B, arms["+LS"].loss.lambda_S) == (0.0, 0.2)
    assert (arms["+both"].loss.lambda_B, arms["+both"].loss.lambda_S) == (0.3, 0.2)
    assert base.loss.lambda_B == 0.3  # the base config is untouched


def test_ablate_rows(corpus):
    cfg = TrainConfig(**{**small_cfg().__dict__, "epochs": 2})
    rows = ablate(corpus, cfg, parse_arms("baseline,+both"), seeds=[0, 1])
    assert [r.arm for r in rows] == ["baseline", "+both"]
    for r in rows:
        assert not r.errors and len(r.runs) == 2
        vals = [run["metrics"]["Acc"] for run in r.runs]
        assert r.mean["Acc"] == pytest.approx(np.mean(vals))
        assert r.sd["Acc"] == pytest.approx(np.std(vals, ddof=1))
    assert "baseline" in format_table(rows)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ablate_records_failures_without_aborting(corpus):
    cfg = TrainConfig(**{**small_cfg().__dict__, "epochs": 1, "lr": 1e300})
    rows = ablate(corpus, cfg, parse_arms("baseline"), seeds=[0])
    assert rows[0].errors and "NonFiniteLoss" in rows[0].errors[0]
