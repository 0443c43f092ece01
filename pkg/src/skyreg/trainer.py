"""Training loop, learning-rate schedule, checkpointing and resumption.

Every variant trains on episode batches. Stateless variants without the
temporal terms use two-frame episodes (a single frame pair); the temporal and
recurrent variants use full episodes. The data drawn at iteration ``i`` is a
pure function of ``(seed, i)``, so a resumed run replays exactly.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from skyreg import ingest, network
from skyreg.errors import CheckpointIncompatible, DatasetEmpty
from skyreg.losses import REGULARIZERS, LossReport, episode_loss

log = logging.getLogger(__name__)

ALL_REGS = REGULARIZERS
_VARIANTS = {
    #  name            iters   batch decay  regs                 model   K   finetune
    "BASE":         (300000, 64, 100000, (),                  "BASE", 2,  False),
    "REG-P":        (90000,  32, 30000,  ("p",),              "BASE", 2,  True),
    "REG-S":        (90000,  32, 30000,  ("s",),              "BASE", 2,  True),
    "REG-T":        (90000,  32, 30000,  ("t1", "t2"),        "BASE", 16, True),
    "REG-ALL":      (90000,  32, 30000,  ALL_REGS,            "BASE", 16, True),
    "LSTM":         (90000,  8,  30000,  (),                  "LSTM", 16, True),
    "LSTM-REG-ALL": (90000,  8,  30000,  ALL_REGS,            "LSTM", 16, True),
}
VARIANTS = tuple(_VARIANTS)


@dataclass
class TrainConfig:
    variant: str = "BASE"
    total_iters: int = 300000
    batch_size: int = 64
    lr_initial: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 100000
    seed: int = 0
    enabled_regularizers: tuple = ()
    finetune_from: Optional[str] = None
    episode_len: int = 2
    n_parents: int = 2
    checkpoint_every: int = 5000
    grad_clip: float = 10.0
    width_divisor: int = 1
    hidden_dim: int = 1024
    max_offset: float = 32.0
    margin: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if isinstance(self.enabled_regularizers, str):
            self.enabled_regularizers = tuple(
                r.strip() for r in self.enabled_regularizers.split(",") if r.strip())
        self.enabled_regularizers = tuple(self.enabled_regularizers)
        bad = set(self.enabled_regularizers) - set(ALL_REGS)
        if bad:
            raise ValueError(f"unknown regularizers {sorted(bad)}")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        """Defaults of the published schedule for ``variant``, then ``overrides``."""
        if variant not in _VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        iters, batch, decay, regs, _, k, _ = _VARIANTS[variant]
        base = dict(variant=variant, total_iters=iters, batch_size=batch,
                    lr_decay_every=decay, enabled_regularizers=regs, episode_len=k)
        base.update(overrides)
        return cls(**base)

    @property
    def model_variant(self) -> str:
        return _VARIANTS[self.variant][4]

    @property
    def requires_finetune(self) -> bool:
        return _VARIANTS[self.variant][6]

    def model_config(self) -> network.ModelConfig:
        return network.ModelConfig(variant=self.model_variant, hidden_dim=self.hidden_dim,
                                   width_divisor=self.width_divisor, max_offset=self.max_offset)


def _coerce(value: str, annotation):
    text = value.strip()
    if text.lower() in ("none", ""):
        return None
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    if "tuple" in kind:
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if "int" in kind:
        return int(float(text))
    if "float" in kind:
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed) into typed fields."""
    hints = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(value, hints[key])
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> TrainConfig:
    """Variant defaults, then the config file, then ``overrides``."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    if overrides:
        hints = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
        for k, v in overrides.items():
            if k not in hints:
                raise ValueError(f"unknown key {k!r}")
            values[k] = _coerce(v, hints[k]) if isinstance(v, str) else v
    variant = values.pop("variant", "BASE")
    return TrainConfig.for_variant(variant, **values)


def format_config(config: TrainConfig) -> str:
    lines = []
    for k, v in asdict(config).items():
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def lr_at(config: TrainConfig, iteration: int) -> float:
    if not 0 <= iteration < config.total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {config.total_iters})")
    return config.lr_initial * config.lr_decay_factor ** (iteration // config.lr_decay_every)


@dataclass
class TrainState:
    model: network.HomographyNet
    optimizer: torch.optim.Adam
    iteration: int
    config: TrainConfig
    # Sampling randomness is derived from (seed, iteration); nothing else to carry.
    rng_key: tuple = field(default=())


def make_optimizer(model, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr_initial,
                            betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)


def _compatible(config: TrainConfig, saved: network.ModelConfig) -> None:
    want = config.model_config()
    if dataclasses.replace(saved, variant=want.variant) != want:
        raise CheckpointIncompatible(f"checkpoint model {saved} does not match {want}")


def initial_model(config: TrainConfig) -> network.HomographyNet:
    if config.requires_finetune and not config.finetune_from:
        raise CheckpointIncompatible(f"{config.variant} must be fine-tuned from a checkpoint")
    model = network.init_params(config.model_config(), config.seed)
    if config.finetune_from:
        src, _, _ = network.load_checkpoint(config.finetune_from)
        _compatible(config, src.config)
        network.transfer_params(src, model)
    return model


def save_state(path, state: TrainState) -> Path:
    return network.save_checkpoint(path, state.model, state.iteration, extra={
        "train_config": asdict(state.config),
        "optimizer": state.optimizer.state_dict(),
    })


def resume(path, config: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild the training state saved in ``path``.

    When ``config`` is given its model configuration must match the
    checkpoint's, otherwise :class:`CheckpointIncompatible` is raised.
    """
    model, step_counter, extra = network.load_checkpoint(path)
    saved_cfg = TrainConfig(**extra["train_config"]) if "train_config" in extra else None
    config = config or saved_cfg
    if config is None:
        raise CheckpointIncompatible(f"{path} carries no training configuration")
    if model.config != config.model_config():
        raise CheckpointIncompatible(f"checkpoint model {model.config} != {config.model_config()}")
    opt = make_optimizer(model, config)
    if "optimizer" in extra:
        opt.load_state_dict(extra["optimizer"])
    return TrainState(model, opt, int(step_counter), config, (config.seed, int(step_counter)))


def draw_episode(videos, config: TrainConfig, iteration: int, slot: int) -> ingest.EpisodeBatch:
    rng = np.random.default_rng([config.seed, iteration, slot])
    vid = videos[int(rng.integers(len(videos)))]
    start = int(rng.integers(0, len(vid) - config.episode_len + 1))
    return ingest.sample_patch_streams(vid, start, config.n_parents, int(rng.integers(2**31)),
                                       config.episode_len, config.margin)


def train_step(state: TrainState, videos) -> LossReport:
    """One optimiser update over ``batch_size`` episodes."""
    config = state.config
    model, opt = state.model, state.optimizer
    for group in opt.param_groups:
        group["lr"] = lr_at(config, state.iteration)
    model.train()
    opt.zero_grad(set_to_none=True)
    reports = []
    for slot in range(config.batch_size):
        batch = draw_episode(videos, config, state.iteration, slot)
        out = network.forward_episode(model, batch)
        total, report = episode_loss(out.homographies, batch, config.enabled_regularizers)
        (total / config.batch_size).backward()
        reports.append(report)
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    opt.step()
    state.iteration += 1
    return LossReport.mean(reports)


def _open_loss_csv(path: Path, keep_below: int, history: Optional[Path] = None):
    """Open ``path`` for writing, keeping earlier rows below ``keep_below``.

    Earlier rows come from ``path`` itself or, when it does not exist yet, from
    ``history`` (the loss file of the run being resumed).
    """
    rows = []
    source = path if path.is_file() else history
    if keep_below > 0 and source is not None and source.is_file():
        with open(source, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) < keep_below]
    fh = open(path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(LossReport.CSV_HEADER)
    writer.writerows(rows)
    return fh, writer


def load_training_videos(data_root, episode_len: int) -> list[ingest.FrameSequence]:
    videos = [v for v in ingest.load_split(data_root, "train") if len(v) >= episode_len]
    if not videos:
        raise DatasetEmpty(f"{data_root}/train holds no video with >= {episode_len} frames")
    return videos


def train(config: TrainConfig, data_root, out_dir, resume_from=None,
          videos: Optional[list] = None,
          callback: Optional[Callable[[int, LossReport], None]] = None) -> Path:
    """Run (or continue) training and return the final checkpoint path.

    Writes ``out_dir/loss.csv`` (one row per step), periodic
    ``out_dir/checkpoints/step_{N}.ckpt`` files and ``config.resolved``.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    if videos is None:
        videos = load_training_videos(data_root, config.episode_len)
    (out_dir / "config.resolved").write_text(format_config(config))

    if resume_from:
        state = resume(resume_from, config)
    else:
        model = initial_model(config)
        state = TrainState(model, make_optimizer(model, config), 0, config, (config.seed, 0))

    history = Path(resume_from).parent.parent / "loss.csv" if resume_from else None
    fh, writer = _open_loss_csv(out_dir / "loss.csv", state.iteration, history)
    try:
        while state.iteration < config.total_iters:
            step = state.iteration
            report = train_step(state, videos)
            writer.writerow(report.as_row(step))
            if callback:
                callback(step, report)
            if step % 100 == 0:
                log.info("step %d total %.5f photometric %.5f", step, report.total, report.photometric)
            if config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
                fh.flush()
                save_state(ckpt_dir / f"step_{state.iteration}.ckpt", state)
    finally:
        fh.close()
    final = ckpt_dir / f"step_{state.iteration}.ckpt"
    save_state(final, state)
    return final
