"""Synthetic fine-grained clips: a rotating clock hand whose classes differ only
in how far it turns over the clip.

Nuisance factors (pivot position, starting phase, pixel noise) are drawn
per sample from a stream keyed by ``(seed, split, index)``, independently
of the class, so labels are identifiable from rotation extent alone.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .rng import stream

INDEX_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthTaskConfig:
    num_classes: int = 4
    t_frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 1
    rotation_extents: tuple = (0.25, 0.5, 0.75, 1.0)
    noise_sigma: float = 0.05
    position_jitter: float = 2.0
    phase_jitter: float = 1.0
    hand_length: float = 11.0
    hand_width: float = 2.0
    train_per_class: int = 50
    val_per_class: int = 10
    test_per_class: int = 25
    long_tail_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        ext = tuple(float(e) for e in self.rotation_extents)
        object.__setattr__(self, "rotation_extents", ext)
        if len(ext) != self.num_classes:
            raise ValueError("need exactly one rotation extent per class")
        if len(set(ext)) != len(ext):
            raise ValueError("rotation extents must be pairwise distinct")
        if self.t_frames < 1 or self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError("clip dimensions must be positive")
        if self.long_tail_ratio is not None and not 0.0 < self.long_tail_ratio <= 1.0:
            raise ValueError("long_tail_ratio must lie in (0, 1]")

    @property
    def min_extent_gap(self):
        e = np.sort(self.rotation_extents)
        return float(np.min(np.diff(e))) if len(e) > 1 else float("inf")

    def class_counts(self, split):
        head = {"train": self.train_per_class, "val": self.val_per_class,
                "test": self.test_per_class}[split]
        if self.long_tail_ratio is None:
            return [head] * self.num_classes
        return [max(1, int(round(head * self.long_tail_ratio ** k))) for k in range(self.num_classes)]


HARD_EXTENTS = (0.6, 0.7, 0.8, 0.9)


@dataclass
class LabeledClip:
    clip: np.ndarray          # (T, H, W, ch)
    label: int
    meta: dict = field(default_factory=dict)


@dataclass
class ClipSet:
    clips: np.ndarray         # (n, T, H, W, ch)
    labels: np.ndarray
    meta: list

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ClipSet(self.clips[idx], self.labels[idx], [self.meta[i] for i in idx])


def render_hand(height, width, center, angle, length, thickness):
    """Anti-aliased segment from ``center`` at ``angle`` (radians, CCW, y up).

    Coverage falls off linearly over one pixel at the segment boundary, so
    sub-pixel changes in angle change pixel values.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    px, py = xs + 0.5, ys + 0.5
    cx, cy = center
    dx, dy = np.cos(angle), -np.sin(angle)
    rx, ry = px - cx, py - cy
    s = np.clip(rx * dx + ry * dy, 0.0, length)
    dist = np.hypot(rx - s * dx, ry - s * dy)
    return np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)


def _nuisance(cfg, rng):
    cx = cfg.width / 2.0 + rng.uniform(-cfg.position_jitter, cfg.position_jitter)
    cy = cfg.height / 2.0 + rng.uniform(-cfg.position_jitter, cfg.position_jitter)
    phase = rng.uniform(0.0, 2.0 * np.pi * cfg.phase_jitter)
    return cx, cy, phase


def generate_clip(cfg, class_id, rng):
    if not 0 <= class_id < cfg.num_classes:
        raise ValueError(f"class {class_id} outside [0, {cfg.num_classes})")
    cx, cy, phase = _nuisance(cfg, rng)
    T = cfg.t_frames
    extent = cfg.rotation_extents[class_id]
    steps = np.arange(T) / max(T - 1, 1)
    angles = phase + 2.0 * np.pi * extent * steps
    frames = np.stack([
        render_hand(cfg.height, cfg.width, (cx, cy), a, cfg.hand_length, cfg.hand_width)
        for a in angles
    ])
    clip = np.repeat(frames[..., None], cfg.channels, axis=-1)
    noise = rng.normal(0.0, 1.0, size=clip.shape)
    if cfg.noise_sigma > 0:
        clip = clip + cfg.noise_sigma * noise
    meta = {"center": [cx, cy], "phase": phase, "extent": extent}
    return LabeledClip(clip, int(class_id), meta)


def generate_split(cfg, split):
    counts = cfg.class_counts(split)
    clips, labels, metas = [], [], []
    i = 0
    for k, n in enumerate(counts):
        for _ in range(n):
            item = generate_clip(cfg, k, stream(cfg.seed, "data", split, i))
            clips.append(item.clip)
            labels.append(item.label)
            metas.append(item.meta)
            i += 1
    shape = (0, cfg.t_frames, cfg.height, cfg.width, cfg.channels)
    arr = np.stack(clips) if clips else np.zeros(shape)
    return ClipSet(arr, np.asarray(labels, dtype=np.int64), metas)


def generate_dataset(cfg):
    return {s: generate_split(cfg, s) for s in SPLITS}


def frame_orientation(frame):
    """Principal-axis orientation (radians in ``(-pi/2, pi/2]``, CCW, y up)
    from second-order central image moments."""
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=-1)
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x, y = xs + 0.5, -(ys + 0.5)
    m = img.sum()
    mx, my = (img * x).sum() / m, (img * y).sum() / m
    mu20 = (img * (x - mx) ** 2).sum()
    mu02 = (img * (y - my) ** 2).sum()
    mu11 = (img * (x - mx) * (y - my)).sum()
    return 0.5 * np.arctan2(2.0 * mu11, mu20 - mu02)


# ---------------------------------------------------------------------------
# persistence


def _config_dict(cfg):
    d = asdict(cfg)
    d["rotation_extents"] = list(cfg.rotation_extents)
    return d


def save_dataset(data, cfg, directory):
    """Raw little-endian float64 clip files plus ``index.json``."""
    os.makedirs(directory, exist_ok=True)
    items = []
    for split in SPLITS:
        if split not in data:
            continue
        os.makedirs(os.path.join(directory, split), exist_ok=True)
        cs = data[split]
        for i in range(len(cs)):
            rel = f"{split}/{i:05d}.f64"
            cs.clips[i].astype("<f8").tofile(os.path.join(directory, rel))
            items.append({"file": rel, "label": int(cs.labels[i]), "split": split, "meta": cs.meta[i]})
    index = {"version": INDEX_VERSION, "config": _config_dict(cfg), "items": items}
    with open(os.path.join(directory, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return directory


def load_dataset(directory):
    with open(os.path.join(directory, "index.json")) as fh:
        index = json.load(fh)
    if index.get("version") != INDEX_VERSION:
        raise ValueError(f"unsupported dataset index version {index.get('version')!r}")
    raw = dict(index["config"])
    raw["rotation_extents"] = tuple(raw["rotation_extents"])
    cfg = SynthTaskConfig(**raw)
    shape = (cfg.t_frames, cfg.height, cfg.width, cfg.channels)
    grouped = {s: ([], [], []) for s in SPLITS}
    for item in index["items"]:
        arr = np.fromfile(os.path.join(directory, item["file"]), dtype="<f8")
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{item['file']}: {arr.size} values, expected shape {shape}")
        label = int(item["label"])
        if not 0 <= label < cfg.num_classes:
            raise ValueError(f"{item['file']}: label {label} out of range")
        c, l, m = grouped[item.get("split", "train")]
        c.append(arr.reshape(shape).astype(np.float64))
        l.append(label)
        m.append(item["meta"])
    out = {}
    for s, (c, l, m) in grouped.items():
        arr = np.stack(c) if c else np.zeros((0,) + shape)
        out[s] = ClipSet(arr, np.asarray(l, dtype=np.int64), m)
    return out, cfg
