"""Training orchestration: alternating G/D updates, step-decay learning
rate, and three-stage progressive stack growth with exact weight carryover.

Determinism contract: with a fixed config and seed, the whole run is a pure
function — sample order per epoch comes from a counter-based RNG keyed on
(seed, epoch), torch RNG state is seeded up front and captured in
checkpoints, and resuming reproduces the uninterrupted trajectory. The
discriminator persists across stages; the generator grows.
"""

from __future__ import annotations

import copy
import csv
import json
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoints import state_digest
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .errors import CheckpointError, ConfigError, TrainingDivergenceError
from .generator import GeneratorConfig, StackedGenerator, build_generator, grow_stack
from .losses import (
    LossWeights,
    discriminator_total,
    generator_total,
    lsgan_d_loss,
    lsgan_g_loss,
    perceptual_loss,
    pixel_loss,
)

MAX_STACK = 5
LOSS_COLUMNS = ("step", "adv", "pix", "per", "total", "d_total")


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 1e-3
    decay_factor: float = 0.9
    decay_period: int = 30
    decay_unit: str = "epoch"  # "step" decays per minibatch instead
    batch_size: int = 8
    epochs: int = 250
    stages: tuple = (1, 2, 3)
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    deterministic: bool = True

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages or any(b >= a for a, b in zip(stages[1:], stages)):
            raise ConfigError(f"stages must be strictly increasing, got {stages}")
        if stages[0] < 1 or stages[-1] > MAX_STACK:
            raise ConfigError(f"stage stack sizes must lie in [1, {MAX_STACK}], got {stages}")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_period < 1:
            raise ConfigError("batch_size and decay_period must be >= 1, epochs >= 0")
        if self.decay_unit not in ("epoch", "step"):
            raise ConfigError(f"decay_unit must be epoch or step, got {self.decay_unit!r}")
        if not 0 < self.decay_factor <= 1 or self.lr_initial <= 0:
            raise ConfigError("need lr_initial > 0 and decay_factor in (0, 1]")


def lr_at(epoch, cfg):
    """Step-decayed learning rate: lr0 * factor^(epoch // period)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr_initial * cfg.decay_factor ** (epoch // cfg.decay_period)


def stage_budgets(cfg):
    """Epochs per stage: equal split, remainder to the last stage."""
    q, r = divmod(cfg.epochs, len(cfg.stages))
    budgets = [q] * len(cfg.stages)
    budgets[-1] += r
    return budgets


def _adam(params, lr, cfg):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


@dataclass
class TrainState:
    generator: StackedGenerator
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    weights: LossWeights = field(default_factory=LossWeights)
    step: int = 0
    loss_rows: list = field(default_factory=list)
    val_rows: list = field(default_factory=list)
    recent: deque = field(default_factory=lambda: deque(maxlen=10))


def train_step(state, batch, weights=None):
    """One discriminator update then one generator update on a batch.

    Returns (generator LossBreakdown, discriminator total) with detached
    values. Non-finite losses abort with the last 10 breakdowns attached.
    """
    w = weights or state.weights
    x, y = batch
    gen, disc = state.generator, state.discriminator
    gen.train()
    disc.train()

    # Discriminator step: the fake is a constant here, so generate it
    # without building a graph.
    with torch.no_grad():
        fake = gen(x).final
    real_prob, real_taps = disc(x, y)
    fake_prob, fake_taps = disc(x, fake)
    d_lsgan = lsgan_d_loss(real_prob, fake_prob, w.lsgan_targets)
    d_per = perceptual_loss(real_taps, fake_taps, w.lambda_per_tap)
    d_total = discriminator_total(d_lsgan, d_per, w.d_perceptual_weight, w.d_perceptual_sign)
    if not bool(torch.isfinite(d_total)):
        raise TrainingDivergenceError(
            f"non-finite discriminator loss at step {state.step}",
            recent_breakdowns=tuple(state.recent),
        )
    state.opt_d.zero_grad(set_to_none=True)
    d_total.backward()
    state.opt_d.step()
    d_total = d_total.detach()

    # Generator step: real-pair taps are constants (no generator gradient
    # flows through them), so recompute them without a graph.
    out = gen(x)
    with torch.no_grad():
        _, real_taps_const = disc(x, y)
    fake_prob_g, fake_taps_g = disc(x, out.final)
    adv = lsgan_g_loss(fake_prob_g, w.lsgan_targets)
    pix = pixel_loss(out.final, y, w.pixel_norm)
    per = perceptual_loss(real_taps_const, fake_taps_g, w.lambda_per_tap)
    try:
        breakdown = generator_total(adv, pix, per, w)
    except TrainingDivergenceError as exc:
        raise TrainingDivergenceError(
            f"{exc} at step {state.step}", recent_breakdowns=tuple(state.recent)
        ) from exc
    state.opt_g.zero_grad(set_to_none=True)
    breakdown.total.backward()
    state.opt_g.step()

    state.step += 1
    floats = breakdown.as_floats()
    row = {"step": state.step, **floats, "d_total": float(d_total)}
    state.loss_rows.append(row)
    state.recent.append(row)
    detached = type(breakdown)(
        adversarial=breakdown.adversarial.detach(),
        pixel=breakdown.pixel.detach(),
        perceptual=breakdown.perceptual.detach(),
        total=breakdown.total.detach(),
    )
    return detached, float(d_total)


def _epoch_order(seed, epoch, n):
    """Sample order for an epoch: a pure function of (seed, epoch)."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def _run_epoch(state, train, cfg, epoch):
    if cfg.decay_unit == "epoch":
        lr = lr_at(epoch, cfg)
        _set_lr(state.opt_g, lr)
        _set_lr(state.opt_d, lr)
    order = _epoch_order(cfg.seed, epoch, len(train))
    for start in range(0, len(order), cfg.batch_size):
        if cfg.decay_unit == "step":
            lr = lr_at(state.step, cfg)
            _set_lr(state.opt_g, lr)
            _set_lr(state.opt_d, lr)
        idx = order[start : start + cfg.batch_size]
        batch = train.take(idx, "train")
        train_step(state, batch)


def _validate(state, val, cfg, epoch):
    if val is None or len(val) == 0:
        return
    gen = state.generator
    gen.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(val), cfg.batch_size):
            idx = np.arange(start, min(start + cfg.batch_size, len(val)))
            x, y = val.take(idx, "val-eval")
            total += float(pixel_loss(gen(x).final, y, state.weights.pixel_norm)) * len(idx)
            n += len(idx)
    state.val_rows.append({"epoch": epoch, "val_pixel": total / n})


@dataclass
class Checkpoint:
    """Full training state: both models, both optimizers, position, RNG."""

    generator_state: dict
    discriminator_state: dict
    opt_g_state: dict
    opt_d_state: dict
    epoch: int
    stage: int
    rng_state: torch.Tensor
    seed: int
    gen_config: dict
    disc_config: dict
    train_config: dict
    loss_rows: list = field(default_factory=list)
    val_rows: list = field(default_factory=list)

    def digest(self):
        merged = {f"generator.{k}": v for k, v in self.generator_state.items()}
        merged.update({f"discriminator.{k}": v for k, v in self.discriminator_state.items()})
        return state_digest(merged)


def _snapshot(state, cfg, gen_cfg, disc_cfg, epoch, stage):
    def clone(sd):
        return {k: v.detach().clone() for k, v in sd.items()}

    return Checkpoint(
        generator_state=clone(state.generator.state_dict()),
        discriminator_state=clone(state.discriminator.state_dict()),
        opt_g_state=copy.deepcopy(state.opt_g.state_dict()),
        opt_d_state=copy.deepcopy(state.opt_d.state_dict()),
        epoch=epoch,
        stage=stage,
        rng_state=torch.get_rng_state(),
        seed=cfg.seed,
        gen_config=asdict(replace(gen_cfg, num_unets=stage)),
        disc_config=asdict(disc_cfg),
        train_config=asdict(cfg),
        loss_rows=list(state.loss_rows),
        val_rows=list(state.val_rows),
    )


def save_full(ckpt, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "generator_state": ckpt.generator_state,
        "discriminator_state": ckpt.discriminator_state,
        "opt_g_state": ckpt.opt_g_state,
        "opt_d_state": ckpt.opt_d_state,
        "epoch": ckpt.epoch,
        "stage": ckpt.stage,
        "rng_state": ckpt.rng_state,
        "seed": ckpt.seed,
        "gen_config": ckpt.gen_config,
        "disc_config": ckpt.disc_config,
        "train_config": ckpt.train_config,
        "loss_rows": ckpt.loss_rows,
        "val_rows": ckpt.val_rows,
    }
    torch.save(payload, path)
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(
            {
                "epoch": ckpt.epoch,
                "stage": ckpt.stage,
                "seed": ckpt.seed,
                "digest": ckpt.digest(),
                "parameter_count": int(sum(v.numel() for v in ckpt.generator_state.values())),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    return path


def load_full(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    try:
        return Checkpoint(**payload)
    except TypeError as exc:
        raise CheckpointError(f"{path} is not a full training checkpoint: {exc}") from exc


def models_from_checkpoint(ckpt):
    """Rebuild generator and discriminator in eval mode from a checkpoint."""
    gen = StackedGenerator(GeneratorConfig(**ckpt.gen_config))
    gen.load_state_dict(ckpt.generator_state)
    disc = Discriminator(DiscriminatorConfig(**_untuple(ckpt.disc_config)))
    disc.load_state_dict(ckpt.discriminator_state)
    gen.eval()
    disc.eval()
    return gen, disc


def _untuple(cfg_dict):
    d = dict(cfg_dict)
    if "tap_indices" in d:
        d["tap_indices"] = tuple(d["tap_indices"])
    return d


def fit_progressive(
    data,
    cfg,
    weights=None,
    gen_cfg=None,
    disc_cfg=None,
    out_dir=None,
    stop_after_epoch=None,
    start_ckpt=None,
):
    """Run the staged training schedule; returns the final Checkpoint.

    `data` is a dict of TensorSplits with at least "train" (and optionally
    "val", consulted once per epoch). When `out_dir` is given, a checkpoint
    is written per stage under out_dir/checkpoints/. `stop_after_epoch`
    ends the run early at a global-epoch boundary (used for resume tests);
    `start_ckpt` continues a previous run.
    """
    weights = weights or LossWeights()
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    if "train" not in data:
        raise ConfigError("data must contain a train split")
    train, val = data["train"], data.get("val")
    torch.use_deterministic_algorithms(cfg.deterministic)

    budgets = stage_budgets(cfg)
    bounds = np.cumsum(budgets)

    if start_ckpt is None:
        torch.manual_seed(cfg.seed)
        gen = None
        disc = build_discriminator(disc_cfg, seed=cfg.seed + 1)
        opt_d = _adam(disc.parameters(), cfg.lr_initial, cfg)
        epoch = 0
        state = None
    else:
        if start_ckpt.train_config.get("batch_size") != cfg.batch_size:
            warnings.warn("resuming with a different batch size: new loss trajectory")
        if start_ckpt.seed != cfg.seed:
            raise CheckpointError(
                f"checkpoint seed {start_ckpt.seed} does not match config seed {cfg.seed}"
            )
        gen, disc = models_from_checkpoint(start_ckpt)
        opt_g = _adam(gen.parameters(), cfg.lr_initial, cfg)
        opt_g.load_state_dict(start_ckpt.opt_g_state)
        opt_d = _adam(disc.parameters(), cfg.lr_initial, cfg)
        opt_d.load_state_dict(start_ckpt.opt_d_state)
        torch.set_rng_state(start_ckpt.rng_state)
        epoch = start_ckpt.epoch
        state = TrainState(gen, disc, opt_g, opt_d, weights)
        state.step = len(start_ckpt.loss_rows)
        state.loss_rows = list(start_ckpt.loss_rows)
        state.val_rows = list(start_ckpt.val_rows)

    ckpt = start_ckpt
    for i, (k, budget) in enumerate(zip(cfg.stages, budgets)):
        if epoch >= bounds[i]:
            continue  # stage already complete (resume path)
        if gen is None:
            gen = build_generator(replace(gen_cfg, num_unets=k), seed=cfg.seed)
            fresh_stage = True
        elif gen.config.num_unets < k:
            while gen.config.num_unets < k:
                gen = grow_stack(gen, gen.state_dict())
            fresh_stage = True
        else:
            fresh_stage = False  # resuming mid-stage; optimizer already loaded
        if fresh_stage or state is None:
            opt_g = _adam(gen.parameters(), lr_at(epoch, cfg), cfg)
            rows = state.loss_rows if state else []
            vrows = state.val_rows if state else []
            steps = state.step if state else 0
            state = TrainState(gen, disc, opt_g, opt_d, weights)
            state.loss_rows, state.val_rows, state.step = rows, vrows, steps
        else:
            state.generator = gen

        while epoch < bounds[i]:
            _run_epoch(state, train, cfg, epoch)
            _validate(state, val, cfg, epoch)
            epoch += 1
            if stop_after_epoch is not None and epoch >= stop_after_epoch and epoch < cfg.epochs:
                return _snapshot(state, cfg, gen_cfg, disc_cfg, epoch, k)

        ckpt = _snapshot(state, cfg, gen_cfg, disc_cfg, epoch, k)
        if out_dir is not None:
            save_full(ckpt, Path(out_dir) / "checkpoints" / f"stage{k}.pt")

    if ckpt is None:
        raise ConfigError("nothing to train: epochs already consumed")
    return ckpt


def resume(ckpt, data, cfg, weights=None, gen_cfg=None, disc_cfg=None, out_dir=None):
    """Continue training from a checkpoint to cfg.epochs.

    With no epochs left the checkpoint is returned unchanged; in
    deterministic mode the loss log continues the original trajectory.
    """
    if ckpt.epoch >= cfg.epochs:
        return ckpt
    return fit_progressive(
        data,
        cfg,
        weights=weights,
        gen_cfg=gen_cfg,
        disc_cfg=disc_cfg,
        out_dir=out_dir,
        start_ckpt=ckpt,
    )


def write_loss_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOSS_COLUMNS})
    return path
