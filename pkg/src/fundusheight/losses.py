"""Training objectives: least-squares adversarial terms, pixel
reconstruction, tap-feature perceptual distance, and the weighted
composites for generator and discriminator.

Every loss is mean-reduced, so values are invariant to batch size for
replicated samples. All functions accept tensors or plain numbers and
return 0-d tensors (differentiable when the inputs are).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError, TrainingDivergenceError

LSGAN_TARGETS = (0.0, 1.0, 1.0)  # (a, b, c): fake label, real label, generator target


@dataclass(frozen=True)
class LossWeights:
    alpha_perceptual: float = 100.0
    alpha_pixel: float = 1.0
    alpha_adv: float = 50.0
    lambda_per_tap: tuple = (5.0, 1.0, 5.0, 5.0)
    pixel_norm: str = "l2"
    lsgan_targets: tuple = LSGAN_TARGETS
    d_perceptual_weight: float = 1.0
    d_perceptual_sign: str = "maximize"

    def __post_init__(self):
        if self.pixel_norm.lower() not in ("l1", "l2"):
            raise ConfigError(f"pixel_norm must be L1 or L2, got {self.pixel_norm!r}")
        if len(self.lsgan_targets) != 3:
            raise ConfigError(f"lsgan_targets needs (a, b, c), got {self.lsgan_targets}")
        if self.d_perceptual_sign not in ("maximize", "minimize"):
            raise ConfigError(
                f"d_perceptual_sign must be maximize or minimize, got {self.d_perceptual_sign!r}"
            )


@dataclass
class LossBreakdown:
    adversarial: torch.Tensor
    pixel: torch.Tensor
    perceptual: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        def f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return {
            "adv": f(self.adversarial),
            "pix": f(self.pixel),
            "per": f(self.perceptual),
            "total": f(self.total),
        }


def _t(value):
    return value if torch.is_tensor(value) else torch.as_tensor(value, dtype=torch.float64)


def lsgan_d_loss(real_prob, fake_prob, targets=LSGAN_TARGETS):
    """Least-squares discriminator loss: push real scores to b, fake to a."""
    a, b, _ = targets
    real, fake = _t(real_prob), _t(fake_prob)
    return 0.5 * ((real - b) ** 2).mean() + 0.5 * ((fake - a) ** 2).mean()


def lsgan_g_loss(fake_prob, targets=LSGAN_TARGETS):
    """Least-squares generator loss: push fake scores to c."""
    _, _, c = targets
    return 0.5 * ((_t(fake_prob) - c) ** 2).mean()


def pixel_loss(gen, target, norm="l2"):
    gen, target = _t(gen), _t(target)
    if gen.shape != target.shape:
        raise ShapeError(f"pixel loss shapes differ: {tuple(gen.shape)} vs {tuple(target.shape)}")
    diff = gen - target
    kind = norm.lower()
    if kind == "l2":
        return (diff**2).mean()
    if kind == "l1":
        return diff.abs().mean()
    raise ConfigError(f"pixel norm must be L1 or L2, got {norm!r}")


def _tap_list(taps):
    return taps.features if hasattr(taps, "features") else list(taps)


def perceptual_loss(taps_real, taps_fake, lambdas=(5.0, 1.0, 5.0, 5.0)):
    """Weighted per-tap mean absolute feature distance.

    Each tap contributes lambda_i times the L1 distance normalized by the
    tap's element count (and averaged over the batch).
    """
    real, fake = _tap_list(taps_real), _tap_list(taps_fake)
    if len(real) != len(fake):
        raise ShapeError(f"tap counts differ: {len(real)} vs {len(fake)}")
    if len(lambdas) != len(real):
        raise ConfigError(f"{len(lambdas)} lambdas for {len(real)} taps")
    total = None
    for lam, r, f in zip(lambdas, real, fake):
        r, f = _t(r), _t(f)
        if r.shape != f.shape:
            raise ShapeError(f"tap shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
        term = lam * (r - f).abs().mean()
        total = term if total is None else total + term
    return total


def generator_total(adversarial, pixel, perceptual, weights=LossWeights()):
    """Weighted generator objective with the per-term breakdown retained."""
    parts = {"adversarial": _t(adversarial), "pixel": _t(pixel), "perceptual": _t(perceptual)}
    for name, value in parts.items():
        if not bool(torch.isfinite(value).all()):
            raise TrainingDivergenceError(f"non-finite {name} loss: {value}")
    total = (
        weights.alpha_perceptual * parts["perceptual"]
        + weights.alpha_pixel * parts["pixel"]
        + weights.alpha_adv * parts["adversarial"]
    )
    return LossBreakdown(
        adversarial=parts["adversarial"],
        pixel=parts["pixel"],
        perceptual=parts["perceptual"],
        total=total,
    )


def discriminator_total(lsgan_d, perceptual, d_perceptual_weight=1.0, sign="maximize"):
    """Discriminator objective.

    Under the default maximize-discrepancy convention the discriminator is
    rewarded for separating real and fake tap features, so the perceptual
    term enters negatively; "minimize" flips it.
    """
    lsgan_d, perceptual = _t(lsgan_d), _t(perceptual)
    if sign == "maximize":
        return lsgan_d - d_perceptual_weight * perceptual
    if sign == "minimize":
        return lsgan_d + d_perceptual_weight * perceptual
    raise ConfigError(f"sign must be maximize or minimize, got {sign!r}")
