"""Dataset types, corpus ingestion, flip augmentation, and grouped splitting.

Corpus layout on disk (8-bit RGB PNGs):

    root/fundus/<id>.png
    root/heightmap/<id>.png
    root/manifest.csv        # columns: id,fundus_path,heightmap_path

In memory a fundus image carries a value-domain flag so that normalization
is applied exactly once; heightmap targets are float arrays in [0,1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DomainError, ShapeError

RAW = "raw_0_255"
NORMALIZED = "normalized_0_1"

AUGMENT_TAGS = ("none", "hflip", "vflip", "hvflip")
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class FundusImage:
    """A fundus photograph plus bookkeeping flags.

    pixels: H x W x 3; uint8 when raw, float in [0,1] when normalized.
    """

    pixels: np.ndarray
    value_domain: str = RAW
    preprocessed: bool = False

    def __post_init__(self):
        if self.value_domain not in (RAW, NORMALIZED):
            raise ConfigError(f"unknown value domain {self.value_domain!r}")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"fundus image must be H x W x 3, got {self.pixels.shape}")


@dataclass
class SamplePair:
    """An aligned fundus/heightmap pair with identity and split membership.

    `id` names the source image; flip variants share it and differ only in
    `augmentation_tag`.
    """

    id: str
    fundus: FundusImage
    target: np.ndarray  # H x W x 3 float in [0,1]
    split: str | None = None
    augmentation_tag: str = "none"

    def __post_init__(self):
        if self.augmentation_tag not in AUGMENT_TAGS:
            raise ConfigError(f"unknown augmentation tag {self.augmentation_tag!r}")
        if self.target.shape[:2] != self.fundus.pixels.shape[:2]:
            raise ShapeError(
                f"fundus {self.fundus.pixels.shape[:2]} and target "
                f"{self.target.shape[:2]} spatial dimensions differ for id {self.id!r}"
            )

    @property
    def key(self):
        return f"{self.id}__{self.augmentation_tag}"


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be >= 0 and sum to 1, got {fracs}")


@dataclass
class Partition:
    """Disjoint source-id sets covering the corpus."""

    train: list
    val: list
    test: list

    def __post_init__(self):
        self._sets = {name: frozenset(getattr(self, name)) for name in SPLIT_NAMES}
        total = sum(len(s) for s in self._sets.values())
        if total != len(frozenset.union(*self._sets.values())):
            raise DataError("partition splits overlap")

    def split_of(self, source_id):
        for name in SPLIT_NAMES:
            if source_id in self._sets[name]:
                return name
        raise DataError(f"source id {source_id!r} is not in the partition")


def augment_flips(pair):
    """Expand one pair into [identity, hflip, vflip, hvflip] variants.

    Flips are the only legal augmentation for this modality; both pair
    members are transformed identically and each variant keeps the source id.
    """
    if pair.augmentation_tag != "none":
        raise DataError(
            f"pair {pair.id!r} already carries augmentation {pair.augmentation_tag!r}"
        )

    def flipped(arr, tag):
        if tag == "hflip":
            return np.flip(arr, axis=1).copy()
        if tag == "vflip":
            return np.flip(arr, axis=0).copy()
        if tag == "hvflip":
            return np.flip(np.flip(arr, axis=0), axis=1).copy()
        return arr.copy()

    out = []
    for tag in AUGMENT_TAGS:
        out.append(
            replace(
                pair,
                fundus=FundusImage(
                    flipped(pair.fundus.pixels, tag),
                    value_domain=pair.fundus.value_domain,
                    preprocessed=pair.fundus.preprocessed,
                ),
                target=flipped(pair.target, tag),
                augmentation_tag=tag,
            )
        )
    return out


def augment_corpus(pairs):
    out = []
    for p in pairs:
        out.extend(augment_flips(p))
    return out


def make_splits(pairs, ratios=SplitRatios(), seed=0):
    """Partition source ids into train/val/test, deterministic in `seed`.

    All augmented variants of a source image land in the same split; split
    sizes stay within +-1 of the exact fractions at the source level
    (largest-remainder apportionment).
    """
    if not pairs:
        raise DataError("cannot split an empty corpus")
    ids = sorted({p.id for p in pairs})
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]

    n = len(ids)
    exact = [ratios.train * n, ratios.val * n, ratios.test * n]
    counts = [int(np.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for k in sorted(range(3), key=lambda i: (-remainders[i], i))[: n - sum(counts)]:
        counts[k] += 1

    train = shuffled[: counts[0]]
    val = shuffled[counts[0] : counts[0] + counts[1]]
    test = shuffled[counts[0] + counts[1] :]
    return Partition(train=train, val=val, test=test)


def apply_partition(pairs, partition):
    """Stamp each pair's split from its source id; returns the same list."""
    for p in pairs:
        p.split = partition.split_of(p.id)
    return pairs


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------


def load_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path, array):
    """Write an H x W x 3 array (uint8, or float in [0,1]) as 8-bit PNG."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_manifest(root):
    """Read root/manifest.csv and load the referenced image pairs.

    Malformed rows raise DataError with the offending line number.
    """
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"missing manifest: {manifest}")
    pairs = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "fundus_path", "heightmap_path"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(
                f"{manifest} line 1: header must contain columns {sorted(required)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if any(row.get(k) in (None, "") for k in required):
                raise DataError(f"{manifest} line {lineno}: incomplete row {row}")
            fundus = load_image(root / row["fundus_path"])
            target = load_image(root / row["heightmap_path"]).astype(np.float64) / 255.0
            pairs.append(
                SamplePair(id=row["id"], fundus=FundusImage(fundus, value_domain=RAW), target=target)
            )
    if not pairs:
        raise DataError(f"{manifest}: no rows")
    return pairs


def write_corpus(pairs, out_dir):
    """Write pairs in the standard layout; returns the manifest path."""
    out = Path(out_dir)
    (out / "fundus").mkdir(parents=True, exist_ok=True)
    (out / "heightmap").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "fundus_path", "heightmap_path"])
        for p in pairs:
            name = f"{p.key}.png" if p.augmentation_tag != "none" else f"{p.id}.png"
            fpath, hpath = f"fundus/{name}", f"heightmap/{name}"
            pixels = p.fundus.pixels
            if p.fundus.value_domain == NORMALIZED:
                pixels = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
            save_image(out / fpath, pixels)
            save_image(out / hpath, p.target)
            writer.writerow([p.id, fpath, hpath])
    return manifest


def synth_generate(n, seed=0, size=(64, 64), **kwargs):
    """Synthetic stand-in corpus; see the synth module for the renderer."""
    from . import synth

    return synth.synth_generate(n, seed=seed, size=size, **kwargs)


# ---------------------------------------------------------------------------
# Tensor banks for training
# ---------------------------------------------------------------------------


class TensorSplit:
    """In-memory (x, y) tensors for one split, with an access log.

    `take` is the only sanctioned read path; it records (purpose, ids) so
    tests can assert that training-time evaluation never touches the test
    split. Sample order is decided by the caller (seeded), never here.
    """

    def __init__(self, name, x, y, ids):
        self.name = name
        self.x = x
        self.y = y
        self.ids = list(ids)
        self.access_log = []

    def __len__(self):
        return self.x.shape[0]

    def take(self, indices, purpose):
        idx = np.asarray(indices, dtype=np.int64)
        self.access_log.append((purpose, [self.ids[i] for i in idx]))
        return self.x[idx], self.y[idx]


def pairs_to_tensors(pairs, name):
    """Stack pairs into float32 NCHW tensors (normalizing raw fundus pixels)."""
    import torch

    from .preprocess import normalize

    if not pairs:
        raise DataError(f"no pairs for split {name!r}")
    xs, ys, ids = [], [], []
    for p in pairs:
        img = p.fundus if p.fundus.value_domain == NORMALIZED else normalize(p.fundus)
        xs.append(np.transpose(img.pixels.astype(np.float32), (2, 0, 1)))
        ys.append(np.transpose(p.target.astype(np.float32), (2, 0, 1)))
        ids.append(p.key)
    return TensorSplit(name, torch.from_numpy(np.stack(xs)), torch.from_numpy(np.stack(ys)), ids)


def build_bank(pairs):
    """Group stamped pairs by split into TensorSplits: {'train': ..., ...}."""
    bank = {}
    for split in SPLIT_NAMES:
        members = [p for p in pairs if p.split == split]
        if members:
            bank[split] = pairs_to_tensors(members, split)
    if "train" not in bank:
        raise DataError("corpus has no training samples after splitting")
    return bank
