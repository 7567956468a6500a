"""Acceptance gate: twelve behavioral criteria, one test per criterion.

Each test prints one [PASS]/[FAIL] line tagged with its criterion number,
so a verbose run doubles as a checklist. Tolerances and runtime budgets
are asserted inside the tests, not merely observed.
"""

import functools
import json
import math
import time

import numpy as np
import torch

from fundusheight.cli import main
from fundusheight.codec import ColorMap, HeightField, decode_height, encode_height
from fundusheight.config import desk_config
from fundusheight.data import (
    FundusImage,
    SamplePair,
    augment_corpus,
    augment_flips,
    pairs_to_tensors,
)
from fundusheight.discriminator import DiscriminatorConfig, build_discriminator
from fundusheight.generator import GeneratorConfig, build_generator, grow_stack
from fundusheight.losses import (
    LossWeights,
    discriminator_total,
    generator_total,
    lsgan_d_loss,
    lsgan_g_loss,
    perceptual_loss,
    pixel_loss,
)
from fundusheight.metrics import lpips, ssim
from fundusheight.synth import synth_generate
from fundusheight.trainer import (
    TrainConfig,
    TrainState,
    _adam,
    _set_lr,
    lr_at,
    train_step,
)
from test_metrics import naive_ssim_gray


def criterion(number, label):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] criterion {number:2d}: {label}", flush=True)
                raise
            print(f"[PASS] criterion {number:2d}: {label}", flush=True)

        return wrapper

    return deco


# --------------------------------------------------------------------------
# 1. gradient correctness
# --------------------------------------------------------------------------


def _fd_worst_rel_error(loss_fn, models, n_coords=10, h=1e-6):
    """Compare backprop gradients against central differences.

    Picks the highest-|gradient| coordinate of each parameter tensor (the
    most active direction per layer), then the n_coords strongest overall,
    and returns the worst relative disagreement.
    """
    params = [p for m in models for p in m.parameters()]
    for p in params:
        p.grad = None
    loss_fn().backward()
    coords = []
    for p in params:
        if p.grad is None:
            continue
        flat = p.grad.detach().view(-1)
        idx = int(torch.argmax(flat.abs()))
        coords.append((p, idx, float(flat[idx])))
    coords.sort(key=lambda c: -abs(c[2]))
    coords = coords[:n_coords]
    assert coords and abs(coords[0][2]) > 1e-8, "no gradient signal to test"
    worst = 0.0
    with torch.no_grad():
        for p, idx, analytic in coords:
            view = p.data.view(-1)
            orig = float(view[idx])
            view[idx] = orig + h
            hi = float(loss_fn())
            view[idx] = orig - h
            lo = float(loss_fn())
            view[idx] = orig
            fd = (hi - lo) / (2.0 * h)
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
            worst = max(worst, rel)
    return worst


@criterion(1, "analytic gradients match central differences (64-bit, < 60 s)")
def test_criterion_01_gradient_correctness():
    t0 = time.monotonic()
    torch.manual_seed(5)
    gen = build_generator(
        GeneratorConfig(num_unets=2, unet_depth=1, base_channels=2, dropout_rate=0.0),
        seed=3,
    ).double()
    disc = build_discriminator(
        DiscriminatorConfig(
            base_channels=2, image_size=8, num_conv_layers=4, tap_indices=(1, 2, 3, 4)
        ),
        seed=4,
    ).double()
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    y = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    lambdas = (5.0, 1.0, 5.0, 5.0)
    with torch.no_grad():
        fake_const = gen(x).final
        real_taps = disc(x, y)[1]

    def d_line():
        return lsgan_d_loss(disc(x, y)[0], disc(x, fake_const)[0])

    def g_line():
        return lsgan_g_loss(disc(x, gen(x).final)[0])

    def pix_l2():
        return pixel_loss(gen(x).final, y, "l2")

    def pix_l1():
        return pixel_loss(gen(x).final, y, "l1")

    def per():
        return perceptual_loss(real_taps, disc(x, gen(x).final)[1], lambdas)

    def g_total():
        out = gen(x).final
        prob, taps = disc(x, out)
        return generator_total(
            lsgan_g_loss(prob),
            pixel_loss(out, y, "l2"),
            perceptual_loss(real_taps, taps, lambdas),
        ).total

    def d_total():
        prob_r, taps_r = disc(x, y)
        prob_f, taps_f = disc(x, fake_const)
        return discriminator_total(
            lsgan_d_loss(prob_r, prob_f), perceptual_loss(taps_r, taps_f, lambdas)
        )

    cases = (
        ("lsgan_d", d_line, [disc]),
        ("lsgan_g", g_line, [gen, disc]),
        ("pixel_l2", pix_l2, [gen]),
        ("pixel_l1", pix_l1, [gen]),
        ("perceptual", per, [gen, disc]),
        ("generator_total", g_total, [gen, disc]),
        ("discriminator_total", d_total, [disc]),
    )
    for name, fn, models in cases:
        worst = _fd_worst_rel_error(fn, models)
        assert worst < 1e-4, f"{name}: worst relative error {worst:.3g}"
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 2. loss value oracles
# --------------------------------------------------------------------------


@criterion(2, "loss value oracles exact to 1e-6")
def test_criterion_02_loss_oracles():
    def t(value, shape=(4,)):
        return torch.full(shape, float(value), dtype=torch.float64)

    assert abs(float(lsgan_d_loss(t(0.5), t(0.5))) - 0.25) <= 1e-6
    assert abs(float(lsgan_g_loss(t(0.0))) - 0.5) <= 1e-6
    shape = (2, 3, 4, 4)
    assert abs(float(pixel_loss(t(0.6, shape), t(0.5, shape), "l2")) - 0.01) <= 1e-6
    tap_real = [torch.zeros(8, dtype=torch.float64)]
    tap_fake = [torch.full((8,), 0.5, dtype=torch.float64)]
    assert abs(float(perceptual_loss(tap_real, tap_fake, lambdas=(2.0,))) - 1.0) <= 1e-6
    one = torch.tensor(1.0, dtype=torch.float64)
    assert abs(float(generator_total(one, one, one).total) - 151.0) <= 1e-6
    quarter, tenth = torch.tensor(0.25), torch.tensor(0.1)
    assert abs(float(discriminator_total(quarter, tenth, 1.0, "maximize")) - 0.15) <= 1e-6
    assert abs(float(discriminator_total(quarter, tenth, 1.0, "minimize")) - 0.35) <= 1e-6


# --------------------------------------------------------------------------
# 3. deep-supervision identity
# --------------------------------------------------------------------------


@criterion(3, "final equals the elementwise mean of K heads, K in {1,2,3,5}")
def test_criterion_03_supervision_identity():
    x = torch.rand(2, 3, 16, 16)
    for k in (1, 2, 3, 5):
        gen = build_generator(
            GeneratorConfig(num_unets=k, unet_depth=2, base_channels=4, dropout_rate=0.0),
            seed=k,
        )
        gen.eval()
        with torch.no_grad():
            out = gen(x)
        assert len(out.heads) == k
        dev = float((out.final - torch.stack(out.heads).mean(dim=0)).abs().max())
        assert dev <= 1e-6, f"K={k}: max deviation {dev:.3g}"


# --------------------------------------------------------------------------
# 4. progressive growth
# --------------------------------------------------------------------------


@criterion(4, "grow_stack preserves heads 1..k bitwise on a probe batch")
def test_criterion_04_progressive_growth():
    x = torch.rand(2, 3, 16, 16)
    for k in (1, 2):
        cfg = GeneratorConfig(num_unets=k, unet_depth=2, base_channels=4, dropout_rate=0.0)
        small = build_generator(cfg, seed=20 + k)
        small.eval()
        with torch.no_grad():
            before = [h.clone() for h in small(x).heads]
        grown = grow_stack(small, small.state_dict(), seed=99)
        grown.eval()
        with torch.no_grad():
            after = grown(x).heads
        assert len(after) == k + 1
        for i, (b, a) in enumerate(zip(before, after)):
            assert torch.equal(b, a), f"K={k}: head {i + 1} changed after growth"


# --------------------------------------------------------------------------
# 5. overfit sanity
# --------------------------------------------------------------------------


@criterion(5, "8-pair overfit: pixel L2 < 0.01 and SSIM > 0.95 in 2000 steps")
def test_criterion_05_overfit_sanity():
    t0 = time.monotonic()
    torch.manual_seed(0)
    pairs = synth_generate(8, seed=11, size=(64, 64), bump_range=(1, 1))
    split = pairs_to_tensors(pairs, "train")
    x, y = split.x, split.y

    gen = build_generator(
        GeneratorConfig(num_unets=1, unet_depth=4, base_channels=16, dropout_rate=0.0),
        seed=0,
    )
    disc = build_discriminator(DiscriminatorConfig(base_channels=8, image_size=64), seed=1)
    cfg = TrainConfig(batch_size=8, epochs=1, stages=(1,), decay_unit="step", decay_period=100)
    state = TrainState(
        gen,
        disc,
        _adam(gen.parameters(), cfg.lr_initial, cfg),
        _adam(disc.parameters(), cfg.lr_initial, cfg),
        LossWeights(),
    )
    batch = (x, y)
    pix = score = None
    for step in range(1, 2001):
        lr = lr_at(state.step, cfg)
        _set_lr(state.opt_g, lr)
        _set_lr(state.opt_d, lr)
        train_step(state, batch)
        if step % 50 == 0:
            gen.eval()
            with torch.no_grad():
                pred = gen(x).final
            pix = float(torch.mean((pred - y) ** 2))
            score = float(np.mean([ssim(pred[i], y[i]) for i in range(len(pairs))]))
            gen.train()
            if pix < 0.01 and score > 0.95:
                break
    elapsed = time.monotonic() - t0
    assert pix is not None and pix < 0.01, f"pixel L2 {pix} after {state.step} steps"
    assert score > 0.95, f"train SSIM {score} after {state.step} steps"
    assert elapsed < 600.0, f"overfit took {elapsed:.0f}s"


# --------------------------------------------------------------------------
# 6. codec roundtrip
# --------------------------------------------------------------------------


@criterion(6, "codec roundtrip within 500/255 um; exact at control points")
def test_criterion_06_codec_roundtrip():
    cmap = ColorMap()
    rng = np.random.default_rng(42)
    fields = rng.uniform(0.0, 500.0, size=(1000, 8, 8))
    stacked = fields.reshape(1000 * 8, 8)  # one decode pass over all 1000 fields
    decoded = decode_height(encode_height(HeightField(stacked), cmap), cmap).values
    worst = float(np.max(np.abs(decoded - stacked)))
    assert worst <= 500.0 / 255.0 + 1e-9, f"worst roundtrip error {worst:.4f} um"

    stop_heights = np.array([f * 500.0 for f, _ in cmap.stops])
    stop_colors = np.array([rgb for _, rgb in cmap.stops])
    encoded = encode_height(HeightField(stop_heights[None, :]), cmap)
    assert np.array_equal(encoded[0], stop_colors)
    recovered = decode_height(stop_colors[None, :, :], cmap).values[0]
    assert np.array_equal(recovered, stop_heights)


# --------------------------------------------------------------------------
# 7. SSIM oracle equivalence
# --------------------------------------------------------------------------


@criterion(7, "SSIM matches the naive sliding-window oracle on 50 pairs")
def test_criterion_07_ssim_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        a = rng.uniform(size=(32, 32))
        noise = rng.normal(scale=rng.uniform(0.01, 0.4), size=a.shape)
        b = np.clip(a + noise, 0.0, 1.0)
        worst = max(worst, abs(ssim(a, b) - naive_ssim_gray(a, b)))
    assert worst < 1e-6, f"worst |delta| {worst:.3g}"


# --------------------------------------------------------------------------
# 8. LPIPS identity, symmetry, recomputation
# --------------------------------------------------------------------------


@criterion(8, "LPIPS identity = 0, symmetry < 1e-7, tap recomputation to 1e-6")
def test_criterion_08_lpips_properties():
    d = build_discriminator(DiscriminatorConfig(base_channels=8, image_size=32), seed=17)
    d.eval()
    for p in d.parameters():
        p.requires_grad_(False)
    rng = np.random.default_rng(8)

    def img():
        return torch.as_tensor(rng.uniform(size=(3, 32, 32)), dtype=torch.float32)

    x, y, a, b = img(), img(), img(), img()
    assert lpips(y, y, x, d) == 0.0
    assert abs(lpips(a, b, x, d) - lpips(b, a, x, d)) < 1e-7
    with torch.no_grad():
        _, taps_a = d(x[None], a[None])
        _, taps_b = d(x[None], b[None])
    manual = sum(
        float(((fa.double() - fb.double()) ** 2).sum()) / n
        for fa, fb, n in zip(taps_a.features, taps_b.features, taps_a.element_counts())
    )
    assert abs(lpips(a, b, x, d) - manual) <= 1e-6


# --------------------------------------------------------------------------
# 9. augmentation arithmetic
# --------------------------------------------------------------------------


@criterion(9, "flips: 4N samples, double-flip involution, 3407 -> 13628")
def test_criterion_09_augmentation_arithmetic():
    rng = np.random.default_rng(9)

    def pair(i, size):
        return SamplePair(
            id=f"m{i:05d}",
            fundus=FundusImage(rng.integers(0, 256, size=(*size, 3), dtype=np.uint8)),
            target=rng.uniform(size=(*size, 3)),
        )

    small = [pair(i, (6, 6)) for i in range(9)]
    assert len(augment_corpus(small)) == 4 * len(small)

    source = small[0]
    hv = next(p for p in augment_flips(source) if p.augmentation_tag == "hvflip")
    fresh = SamplePair(id="tmp", fundus=FundusImage(hv.fundus.pixels), target=hv.target)
    hv_twice = next(p for p in augment_flips(fresh) if p.augmentation_tag == "hvflip")
    assert np.array_equal(hv_twice.fundus.pixels, source.fundus.pixels)
    assert np.array_equal(hv_twice.target, source.target)

    mock = [pair(i, (1, 1)) for i in range(3407)]
    assert len(augment_corpus(mock)) == 13628


# --------------------------------------------------------------------------
# 10. learning-rate schedule
# --------------------------------------------------------------------------


@criterion(10, "lr schedule oracle values, exact")
def test_criterion_10_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-3
    assert lr_at(30, cfg) == 1e-3 * 0.9
    assert lr_at(65, cfg) == 1e-3 * 0.9**2
    assert lr_at(249, cfg) == 1e-3 * 0.9**8
    # the decimal spellings agree with the products to float precision
    assert math.isclose(lr_at(30, cfg), 9e-4, rel_tol=0.0, abs_tol=1e-15)
    assert math.isclose(lr_at(65, cfg), 8.1e-4, rel_tol=0.0, abs_tol=1e-15)


# --------------------------------------------------------------------------
# 11. desk-scale determinism through the CLI
# --------------------------------------------------------------------------


@criterion(11, "identical desk runs: loss CSVs and checkpoint digests match")
def test_criterion_11_determinism(tmp_path, corpus_dir):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(
            ["train", "--scale", "desk", "--data", str(corpus_dir), "--seed", "3",
             "--out", str(out)]
        )
        assert code == 0
        outs.append(out)
    a, b = outs
    assert (a / "logs" / "loss.csv").read_bytes() == (b / "logs" / "loss.csv").read_bytes()
    for stem in ("stage1", "stage2", "stage3", "final"):
        da = json.load(open(a / "checkpoints" / f"{stem}.json"))["digest"]
        db = json.load(open(b / "checkpoints" / f"{stem}.json"))["digest"]
        assert da == db, f"{stem} checkpoint digests differ"


# --------------------------------------------------------------------------
# 12. ablation harness
# --------------------------------------------------------------------------


@criterion(12, "ablation sweeps emit comparison tables and per-head dumps")
def test_criterion_12_ablation_harness(tmp_path, corpus_dir):
    cfg = desk_config(
        data_root=str(corpus_dir),
        generator=GeneratorConfig(num_unets=2, unet_depth=3, base_channels=8),
        train=TrainConfig(batch_size=4, epochs=2, stages=(1, 2), seed=5),
    )
    cfg_path = cfg.save(tmp_path / "ablate.json")
    expected = {
        "supervision": ["with_supervision", "without_supervision"],
        "pixel_norm": ["pixel_l1", "pixel_l2"],
    }
    for sweep, variants in expected.items():
        out = tmp_path / sweep
        code = main(["ablate", "--sweep", sweep, "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        lines = (out / "reports" / f"ablation_{sweep}.csv").read_text().splitlines()
        assert lines[0] == "variant,ssim,lpips,mse,psnr_db"
        assert [line.split(",")[0] for line in lines[1:]] == variants
        for metric in ("ssim", "lpips", "mse", "psnr_db"):
            assert (out / "figures" / f"{metric}_bars.png").stat().st_size > 0
        for variant in variants:
            dumps = list((out / "figures" / variant).glob("heads_*.png"))
            assert dumps, f"no per-head dumps for {variant}"
