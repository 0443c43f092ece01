import csv

import numpy as np
import pytest
import torch

from skyreg import ingest, network, trainer
from skyreg.errors import CheckpointIncompatible, CorruptCheckpoint, DatasetEmpty
from skyreg.losses import episode_loss


def test_lr_schedule():
    base = trainer.TrainConfig.for_variant("BASE")
    assert trainer.lr_at(base, 0) == 0.001
    assert trainer.lr_at(base, 100000) == pytest.approx(0.0001)
    assert trainer.lr_at(base, 200000) == pytest.approx(0.00001)
    reg = trainer.TrainConfig.for_variant("REG-P", finetune_from="x")
    assert trainer.lr_at(reg, 60000) == pytest.approx(0.00001)
    with pytest.raises(ValueError):
        trainer.lr_at(base, 300000)


@pytest.mark.parametrize("variant,iters,batch,decay", [
    ("BASE", 300000, 64, 100000), ("REG-ALL", 90000, 32, 30000), ("LSTM-REG-ALL", 90000, 8, 30000)])
def test_variant_defaults(variant, iters, batch, decay):
    cfg = trainer.TrainConfig.for_variant(variant)
    assert (cfg.total_iters, cfg.batch_size, cfg.lr_decay_every) == (iters, batch, decay)
    assert cfg.adam_beta1 == 0.9 and cfg.adam_beta2 == 0.999 and cfg.adam_eps == 1e-8


def test_reg_t_enables_both_temporal_terms():
    assert trainer.TrainConfig.for_variant("REG-T").enabled_regularizers == ("t1", "t2")


def test_finetune_required(tmp_path, pan_clip, desk_config):
    cfg = trainer.TrainConfig.for_variant("LSTM", total_iters=1, **desk_config)
    with pytest.raises(CheckpointIncompatible):
        trainer.train(cfg, None, tmp_path, videos=[pan_clip.sequence])


def test_dataset_empty(tmp_path, desk_config):
    cfg = trainer.TrainConfig.for_variant("BASE", total_iters=1, **desk_config)
    with pytest.raises(DatasetEmpty):
        trainer.train(cfg, tmp_path, tmp_path / "out")


def test_config_file_round_trip(tmp_path):
    text = "variant = REG-ALL  # comment\nbatch_size = 4\nfinetune_from = a.ckpt\n"
    (tmp_path / "c.cfg").write_text(text)
    cfg = trainer.load_config(tmp_path / "c.cfg", {"batch_size": "2"})
    assert cfg.batch_size == 2 and cfg.total_iters == 90000
    assert cfg.enabled_regularizers == ("p", "s", "t1", "t2")
    again = trainer.parse_config_text(trainer.format_config(cfg))
    assert trainer.TrainConfig(**again) == cfg
    with pytest.raises(ValueError):
        trainer.parse_config_text("nonsense = 1")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_resume_replays_and_checkpoints(tmp_path, pan_clip, desk_config):
    cfg = trainer.TrainConfig.for_variant("BASE", total_iters=6, batch_size=2, seed=4,
                                          **{**desk_config, "checkpoint_every": 3})
    straight = trainer.train(cfg, None, tmp_path / "a", videos=[pan_clip.sequence])
    assert (tmp_path / "a" / "checkpoints" / "step_3.ckpt").is_file()
    assert (tmp_path / "a" / "config.resolved").is_file()
    trainer.train(cfg, None, tmp_path / "b", videos=[pan_clip.sequence],
                  resume_from=tmp_path / "a" / "checkpoints" / "step_3.ckpt")
    # the resumed run inherits the earlier rows and replays the rest
    assert _rows(tmp_path / "a" / "loss.csv") == _rows(tmp_path / "b" / "loss.csv")
    resumed = tmp_path / "b" / "checkpoints" / "step_6.ckpt"
    ma, _, _ = network.load_checkpoint(straight)
    mb, _, _ = network.load_checkpoint(resumed)
    for k, v in ma.state_dict().items():
        assert torch.equal(v, mb.state_dict()[k])


def test_resume_errors(tmp_path, pan_clip, desk_config):
    cfg = trainer.TrainConfig.for_variant("BASE", total_iters=1, batch_size=1, **desk_config)
    ck = trainer.train(cfg, None, tmp_path, videos=[pan_clip.sequence])
    other = trainer.TrainConfig.for_variant("BASE", total_iters=2, width_divisor=4, hidden_dim=64)
    with pytest.raises(CheckpointIncompatible):
        trainer.resume(ck, other)
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(ck.read_bytes()[:100])
    with pytest.raises(CorruptCheckpoint):
        trainer.resume(broken)


def test_small_step_decreases_frozen_batch_loss(pan_clip, desk_config):
    cfg = trainer.TrainConfig.for_variant("BASE", total_iters=10, **desk_config)
    model = network.init_params(cfg.model_config(), 0)
    batch = ingest.sample_patch_streams(pan_clip.sequence, 2, 1, 0, 2)

    def loss():
        return episode_loss(network.forward_episode(model, batch).homographies, batch)[0]

    before = loss()
    opt = torch.optim.SGD(model.parameters(), lr=1e-5)
    opt.zero_grad()
    before.backward()
    opt.step()
    assert float(loss().detach()) < float(before.detach())


def test_finetune_lstm_from_base(tmp_path, pan_clip, desk_config):
    base = trainer.TrainConfig.for_variant("BASE", total_iters=1, batch_size=1, **desk_config)
    ck = trainer.train(base, None, tmp_path / "base", videos=[pan_clip.sequence])
    lstm = trainer.TrainConfig.for_variant("LSTM-REG-ALL", total_iters=1, batch_size=1,
                                           episode_len=4, finetune_from=str(ck), **desk_config)
    out = trainer.train(lstm, None, tmp_path / "lstm", videos=[pan_clip.sequence])
    model, step_counter, _ = network.load_checkpoint(out)
    assert model.config.variant == "LSTM" and step_counter == 1
    rows = _rows(tmp_path / "lstm" / "loss.csv")
    assert float(rows[1][rows[0].index("reg_t2")]) > 0
    mismatch = trainer.TrainConfig.for_variant("REG-P", total_iters=1, finetune_from=str(ck),
                                               width_divisor=4, hidden_dim=64)
    with pytest.raises(CheckpointIncompatible):
        trainer.train(mismatch, None, tmp_path / "bad", videos=[pan_clip.sequence])
