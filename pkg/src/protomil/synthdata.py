"""Deterministic synthetic cohorts standing in for a slide/text front-end.

Each bag plants a mixture of unit-norm phenotype archetypes: the fraction
of "tumor" (phenotype 0) instances is sampled from a per-class interval
and drives both the class label and the survival hazard.  Coordinates are
laid out as per-phenotype spatial blobs so the positional encoder has
recoverable signal, and the text embedding is a noisy per-class archetype.

Event times follow a Weibull accelerated form: T = X**(1/hazard_shape) /
(hazard_base * exp(hazard_tumor_coeff * fraction)) with X ~ Exp(1), where
``fraction`` is the realized share of tumor instances in the bag.  With
hazard_shape = 1 this is exactly an exponential with that rate; larger
shapes sharpen the time ordering so ranking metrics have headroom at desk
scale.

All randomness flows through per-bag counter-based child streams of the
single seed, so cohorts are bit-reproducible and independent of generation
order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .losses import SurvivalRecord
from .numerics import as_f64
from .priors import l2_normalize_rows

BAG_MAGIC = b"HPDPBAG1"


@dataclass
class GeneratorConfig:
    n_bags: int = 200
    instances_per_bag: tuple = (24, 56)          # inclusive range
    d: int = 32
    n_phenotypes: int = 4
    # one (low, high) tumor-fraction interval per class
    tumor_fraction_ranges: tuple = ((0.05, 0.35), (0.55, 0.95))
    grid_extent: int = 48
    hazard_base: float = 0.1
    hazard_tumor_coeff: float = 1.5
    hazard_shape: float = 12.0
    censor_rate: float = 0.3
    noise_sigma: float = 0.25
    text_noise_sigma: float = 0.5
    scatter_coords: bool = False
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.tumor_fraction_ranges)

    def validate(self):
        if self.n_bags < 1:
            raise ValueError("n_bags must be >= 1")
        lo, hi = self.instances_per_bag
        if not (1 <= lo <= hi):
            raise ValueError("instances_per_bag must be a nonempty range "
                             "with low >= 1")
        if self.d % 4 != 0 or self.d < 4:
            raise ValueError("d must be a positive multiple of 4")
        if self.n_phenotypes < 2:
            raise ValueError("n_phenotypes must be >= 2")
        if self.n_classes < 1:
            raise ValueError("tumor_fraction_ranges must list at least one "
                             "class interval")
        for r in self.tumor_fraction_ranges:
            if not (0.0 <= r[0] <= r[1] <= 1.0):
                raise ValueError("tumor_fraction_ranges entries must be "
                                 "intervals inside [0, 1]")
        if self.grid_extent < 2:
            raise ValueError("grid_extent must be >= 2")
        if self.hazard_base <= 0:
            raise ValueError("hazard_base must be > 0")
        if self.hazard_shape <= 0:
            raise ValueError("hazard_shape must be > 0")
        if not 0.0 <= self.censor_rate < 1.0:
            raise ValueError("censor_rate must lie in [0, 1)")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        if self.text_noise_sigma <= 0:
            raise ValueError("text_noise_sigma must be > 0")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator config field(s): "
                             f"{', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "instances_per_bag" in kwargs:
            kwargs["instances_per_bag"] = tuple(kwargs["instances_per_bag"])
        if "tumor_fraction_ranges" in kwargs:
            kwargs["tumor_fraction_ranges"] = tuple(
                tuple(r) for r in kwargs["tumor_fraction_ranges"])
        return cls(**kwargs).validate()


@dataclass
class Bag:
    """One synthetic slide-level sample."""

    features: np.ndarray        # (N, D)
    coords: np.ndarray          # (N, 2) nonnegative grid indices
    label: int
    survival: SurvivalRecord
    text: np.ndarray            # (D,)
    truth: np.ndarray           # (N,) phenotype ids, test-only ground truth

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def tumor_fraction(self) -> float:
        return float((self.truth == 0).mean())


def _phenotype_archetypes(cfg: GeneratorConfig):
    rng = seeding.child_rng(cfg.seed, seeding.ARCHETYPES)
    arch = l2_normalize_rows(rng.standard_normal((cfg.n_phenotypes, cfg.d)))
    text_arch = l2_normalize_rows(rng.standard_normal((cfg.n_classes, cfg.d)))
    return arch, text_arch


def _blob_coords(truth, cfg, rng) -> np.ndarray:
    coords = np.zeros((truth.shape[0], 2))
    for ph in np.unique(truth):
        members = np.flatnonzero(truth == ph)
        radius = max(1, int(np.ceil(np.sqrt(members.size))))
        center = rng.integers(radius, cfg.grid_extent - radius, size=2)
        offsets = rng.integers(-radius, radius + 1, size=(members.size, 2))
        coords[members] = np.clip(center + offsets, 0, cfg.grid_extent - 1)
    return coords


def _generate_bag(index: int, cfg: GeneratorConfig, archetypes,
                  text_archetypes) -> Bag:
    rng = seeding.child_rng(cfg.seed, seeding.BAG, index + 1)
    label = index % cfg.n_classes
    lo, hi = cfg.instances_per_bag
    n = int(rng.integers(lo, hi + 1))
    tf = float(rng.uniform(*cfg.tumor_fraction_ranges[label]))

    n_tumor = int(round(tf * n))
    others = rng.integers(1, cfg.n_phenotypes, size=n - n_tumor)
    truth = np.concatenate([np.zeros(n_tumor, dtype=np.int64),
                            others.astype(np.int64)])
    truth = truth[rng.permutation(n)]

    features = archetypes[truth] + \
        cfg.noise_sigma * rng.standard_normal((n, cfg.d))
    if cfg.scatter_coords:
        coords = rng.integers(0, cfg.grid_extent, size=(n, 2)).astype(float)
    else:
        coords = _blob_coords(truth, cfg, rng)

    # Hazard uses the realized tumor share so the risk covariate is exactly
    # recoverable from the instances.
    frac = n_tumor / n
    rate = cfg.hazard_base * np.exp(cfg.hazard_tumor_coeff * frac)
    x = rng.exponential(1.0)
    event_time = float(x ** (1.0 / cfg.hazard_shape) / rate)
    if rng.uniform() < cfg.censor_rate:
        t = max(event_time * rng.uniform(), np.finfo(float).tiny)
        record = SurvivalRecord(time=t, event=0)
    else:
        record = SurvivalRecord(time=event_time, event=1)

    text = text_archetypes[label] + \
        cfg.text_noise_sigma * rng.standard_normal(cfg.d)
    return Bag(features=features, coords=coords, label=label,
               survival=record, text=text, truth=truth)


def generate_cohort(cfg: GeneratorConfig):
    """All bags for the configured cohort, ordered by bag index."""
    cfg.validate()
    archetypes, text_archetypes = _phenotype_archetypes(cfg)
    return [_generate_bag(i, cfg, archetypes, text_archetypes)
            for i in range(cfg.n_bags)]


def planted_archetypes(cfg: GeneratorConfig) -> np.ndarray:
    """Ground-truth phenotype directions (unit rows), for verification."""
    return _phenotype_archetypes(cfg)[0]


def split_cohort(cohort, ratios, seed: int):
    """Seeded shuffle then contiguous (train, val, test) split."""
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0 for x in r):
        raise ValueError(f"ratios must be three positive values, got {r}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(r)}")
    n = len(cohort)
    n_train = int(r[0] * n)
    n_val = int(r[1] * n)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} bags at ratios {r} produces an "
                         f"empty subset")
    perm = seeding.child_rng(seed, seeding.SPLIT).permutation(n)
    shuffled = [cohort[i] for i in perm]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


def pooled_instances(cohort) -> np.ndarray:
    """Stack all instance features across bags (clustering population)."""
    return np.concatenate([b.features for b in cohort], axis=0)


# ---------------------------------------------------------------------------
# On-disk cohort format: manifest.json + per-bag binary matrices with a
# 16-byte header (8-byte magic, u32 rows, u32 cols, little-endian), f64
# row-major payload.
# ---------------------------------------------------------------------------

def write_bag_matrix(path, arr: np.ndarray):
    arr = np.atleast_2d(as_f64(arr))
    header = BAG_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.astype("<f8").tobytes())


def read_bag_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:8] != BAG_MAGIC:
            raise ValueError(f"{path}: not a bag matrix file (bad header)")
        rows, cols = struct.unpack("<II", header[8:])
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, "
                         f"got {data.size}")
    return data.reshape(rows, cols).astype(np.float64)


def save_cohort(cohort, out_dir, config: GeneratorConfig = None):
    """Write manifest.json plus per-bag feature/coord binaries."""
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, bag in enumerate(cohort):
        feat_rel = f"bags/bag_{i:05d}.features.bin"
        coord_rel = f"bags/bag_{i:05d}.coords.bin"
        write_bag_matrix(out / feat_rel, bag.features)
        write_bag_matrix(out / coord_rel, bag.coords)
        entries.append({
            "id": i,
            "label": int(bag.label),
            "time": float(bag.survival.time),
            "event": int(bag.survival.event),
            "features": feat_rel,
            "coords": coord_rel,
            "text": [float(v) for v in bag.text],
            "truth": [int(v) for v in bag.truth],
        })
    manifest = {
        "version": BAG_MAGIC.decode(),
        "d": int(cohort[0].features.shape[1]) if cohort else 0,
        "n_bags": len(cohort),
        "bags": entries,
    }
    if config is not None:
        manifest["generator"] = _config_to_jsonable(config)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_cohort(in_dir):
    """Read a cohort written by save_cohort. Returns (bags, manifest)."""
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != BAG_MAGIC.decode():
        raise ValueError(f"{manifest_path}: unsupported cohort version "
                         f"{manifest.get('version')!r}")
    bags = []
    for entry in manifest["bags"]:
        features = read_bag_matrix(root / entry["features"])
        coords = read_bag_matrix(root / entry["coords"])
        bags.append(Bag(
            features=features,
            coords=coords,
            label=int(entry["label"]),
            survival=SurvivalRecord(time=entry["time"],
                                    event=int(entry["event"])),
            text=np.array(entry["text"], dtype=np.float64),
            truth=np.array(entry["truth"], dtype=np.int64),
        ))
    return bags, manifest


def _config_to_jsonable(cfg: GeneratorConfig) -> dict:
    out = {}
    for name in cfg.__dataclass_fields__:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[name] = value
    return out


def scattered(cfg: GeneratorConfig) -> GeneratorConfig:
    """Copy of the config with spatially random coordinates (ablation)."""
    return replace(cfg, scatter_coords=True)
