"""Seeded synthetic colour-texture dataset for desk-scale experiments."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .formats import ManifestEntry, write_manifest, write_pnm

__all__ = ["make_textures", "make_splits", "write_dataset"]


def _class_params(num_classes, rng):
    params = []
    for k in range(num_classes):
        params.append({
            "theta": np.pi * k / num_classes,
            "freq": 0.08 + 0.04 * (k % 4),
            "accent": rng.integers(0, 256, size=3).astype(np.float64),
            "blobs": 3 + (k * 7) % 6,
            "radius": 1.5 + 0.5 * (k % 4),
        })
    return params


def make_textures(num_classes: int = 10, per_class: int = 40, size: int = 32,
                  noise_fraction: float = 0.3, seed: int = 42):
    """Blob textures: an oriented low-contrast grating on a near-grey
    background, overlaid with class-coloured Gaussian blobs.

    Orientation/frequency of the grating, blob colour, count and radius are
    fixed per class; background tint, phase, blob positions and small
    colour jitter vary per image. Finally ``noise_fraction`` of the pixels
    are replaced by uniform random colours.

    Returns ``(images, labels)`` with images as ``size x size x 3`` uint8.
    """
    rng = np.random.default_rng(seed)
    params = _class_params(num_classes, rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images, labels = [], []
    for k, p in enumerate(params):
        for _ in range(per_class):
            th = p["theta"] + rng.uniform(-np.pi / 24, np.pi / 24)
            phase = rng.uniform(0, 2 * np.pi)
            grating = np.sin(2 * np.pi * p["freq"] * (xx * np.cos(th) + yy * np.sin(th)) + phase)
            back = 128.0 + rng.normal(0, 6, size=3)
            img = back + 18.0 * grating[..., None]
            weight = np.zeros((size, size))
            for _ in range(p["blobs"]):
                cy, cx = rng.uniform(0, size, size=2)
                weight = np.maximum(weight, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * p["radius"] ** 2)))
            accent = p["accent"] + rng.normal(0, 8, size=3)
            img = (1 - weight)[..., None] * img + weight[..., None] * accent
            img += rng.normal(0, 4, size=img.shape)
            noisy = rng.random((size, size)) < noise_fraction
            img[noisy] = rng.uniform(0, 255, size=(int(noisy.sum()), 3))
            images.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
            labels.append(k)
    return images, labels


def make_splits(labels, n_splits: int = 4, train_fraction: float = 0.5, seed: int = 42):
    """Per-class random train/test partitions; one ``(train_idx, test_idx)`` pair per split."""
    labels = np.asarray(labels)
    splits = []
    for s in range(n_splits):
        rng = np.random.default_rng([seed, s])
        train, test = [], []
        for y in np.unique(labels):
            members = np.flatnonzero(labels == y)
            perm = rng.permutation(members)
            cut = int(round(train_fraction * len(members)))
            train.extend(perm[:cut].tolist())
            test.extend(perm[cut:].tolist())
        splits.append((sorted(train), sorted(test)))
    return splits


def write_dataset(outdir, num_classes: int = 10, per_class: int = 40, size: int = 32,
                  noise_fraction: float = 0.3, n_splits: int = 4, seed: int = 42):
    """Write images as PPM plus one ``split_{s}.csv`` manifest per split.

    Returns the list of manifest paths.
    """
    out = Path(outdir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    images, labels = make_textures(num_classes, per_class, size, noise_fraction, seed)
    names = []
    for i, (img, y) in enumerate(zip(images, labels)):
        name = f"images/c{y:02}_{i:04}.ppm"
        write_pnm(out / name, img)
        names.append(name)
    manifests = []
    for s, (train, test) in enumerate(make_splits(labels, n_splits, 0.5, seed)):
        entries = [ManifestEntry(names[i], labels[i], "train") for i in train]
        entries += [ManifestEntry(names[i], labels[i], "test") for i in test]
        path = out / f"split_{s}.csv"
        write_manifest(path, entries)
        manifests.append(path)
    return manifests
