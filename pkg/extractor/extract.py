#!/usr/bin/env python3
"""Reference feature extractor: train a small CNN, dump FTRS feature files.

Trains a plain conv-BN-ReLU network with global average pooling on the
training split (with shift/mirror/color augmentation), then writes
L2-normalized GAP descriptors for both splits in the FTRS container format:

    [magic "FTRS"][version u16 LE = 1][flags u16 LE, bit0 = normalized]
    [count u64 LE][dim u32 LE][reserved u32 LE][count*dim float32 LE]

Splits are read in the raw binary layout (cifar10: [fine u8][3072 pixels],
cifar100: [coarse u8][fine u8][3072 pixels], planar RGB).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FTRS_HEADER = struct.Struct("<4sHHQII")
RECORD_SIZES = {"cifar10": 3073, "cifar100": 3074}


@dataclass
class ExtractorConfig:
    fmt: str = "cifar10"
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    width: int = 16  # first conv width; feature dim is width * 4
    augment_shift: bool = True
    augment_mirror: bool = True
    augment_jitter: bool = True

    @property
    def feature_dim(self) -> int:
        return self.width * 4

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def read_split_arrays(path: str | Path, fmt: str) -> tuple[np.ndarray, np.ndarray]:
    """Raw binary split -> (images uint8 [N,3,32,32], fine labels int64 [N])."""
    data = Path(path).read_bytes()
    rec = RECORD_SIZES[fmt]
    if len(data) % rec != 0:
        raise ValueError(f"{path}: length {len(data)} is not a multiple of {rec}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, rec)
    labels = raw[:, 1] if fmt == "cifar100" else raw[:, 0]
    pixels = raw[:, rec - 3072 :].reshape(-1, 3, 32, 32)
    return pixels.copy(), labels.astype(np.int64).copy()


def write_ftrs(path: str | Path, features: np.ndarray, normalized: bool) -> None:
    count, dim = features.shape
    header = FTRS_HEADER.pack(b"FTRS", 1, 1 if normalized else 0, count, dim, 0)
    Path(path).write_bytes(header + features.astype("<f4").tobytes(order="C"))


class PlainNet(nn.Module):
    """Three conv stages with BN, ending in global average pooling."""

    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()

        def block(cin, cout):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )

        self.stage1 = block(3, width)
        self.stage2 = block(width, width * 2)
        self.stage3 = block(width * 2, width * 4)
        self.head = nn.Linear(width * 4, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        x = F.max_pool2d(self.stage1(x), 2)
        x = F.max_pool2d(self.stage2(x), 2)
        x = self.stage3(x)
        return x.mean(dim=(2, 3))  # global average pooling

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def augment_batch(x: torch.Tensor, cfg: ExtractorConfig, gen: torch.Generator) -> torch.Tensor:
    """Shift (pad+crop), mirror, and light color jitter on a [B,3,32,32] float batch."""
    b = x.shape[0]
    if cfg.augment_mirror:
        flip = torch.rand(b, generator=gen) < 0.5
        x[flip] = torch.flip(x[flip], dims=[3])
    if cfg.augment_shift:
        padded = F.pad(x, (4, 4, 4, 4), mode="reflect")
        ox = torch.randint(0, 9, (b,), generator=gen)
        oy = torch.randint(0, 9, (b,), generator=gen)
        out = torch.empty_like(x)
        for i in range(b):
            out[i] = padded[i, :, oy[i] : oy[i] + 32, ox[i] : ox[i] + 32]
        x = out
    if cfg.augment_jitter:
        # per-image brightness/contrast and per-channel scaling
        scale = 1.0 + 0.2 * (torch.rand(b, 3, 1, 1, generator=gen) - 0.5)
        shift = 0.1 * (torch.rand(b, 1, 1, 1, generator=gen) - 0.5)
        x = (x * scale + shift).clamp(0.0, 1.0)
    return x


def train_model(
    images: np.ndarray, labels: np.ndarray, num_classes: int, cfg: ExtractorConfig
) -> PlainNet:
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = PlainNet(num_classes, cfg.width)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    x_all = torch.from_numpy(images).float() / 255.0
    y_all = torch.from_numpy(labels)
    n = x_all.shape[0]
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = augment_batch(x_all[idx].clone(), cfg, gen)
            optimizer.zero_grad()
            loss = F.cross_entropy(model(batch), y_all[idx])
            value = float(loss.detach())
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss={value} "
                    f"(lr={cfg.lr}, batch={cfg.batch_size}, seed={cfg.seed})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += value * len(idx)
        print(f"epoch {epoch + 1}/{cfg.epochs}: loss {epoch_loss / n:.4f}", file=sys.stderr)
    return model


@torch.no_grad()
def extract_features(model: PlainNet, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """L2-normalized GAP descriptors, one row per image."""
    model.eval()
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        x = torch.from_numpy(images[start : start + batch_size]).float() / 255.0
        chunks.append(model.features(x).numpy().astype(np.float64))
    features = np.concatenate(chunks, axis=0)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if (norms <= 1e-12).any():
        raise RuntimeError("a descriptor collapsed to zero norm; cannot L2-normalize")
    return (features / norms).astype(np.float32)


def run(train_path, test_path, out_train, out_test, cfg: ExtractorConfig) -> dict:
    train_images, train_labels = read_split_arrays(train_path, cfg.fmt)
    test_images, _test_labels = read_split_arrays(test_path, cfg.fmt)
    num_classes = int(train_labels.max()) + 1
    model = train_model(train_images, train_labels, num_classes, cfg)
    for path, images in ((out_train, train_images), (out_test, test_images)):
        write_ftrs(path, extract_features(model, images), normalized=True)
    manifest = {
        "tool": "extract.py",
        "config": cfg.to_json(),
        "num_classes": num_classes,
        "feature_dim": cfg.feature_dim,
        "inputs": {
            str(p): hashlib.sha256(Path(p).read_bytes()).hexdigest()
            for p in (train_path, test_path)
        },
        "outputs": [str(out_train), str(out_test)],
    }
    manifest_path = Path(str(out_train) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train", required=True)
    parser.add_argument("--test", required=True)
    parser.add_argument("--format", required=True, choices=["cifar10", "cifar100"])
    parser.add_argument("--out-train", required=True)
    parser.add_argument("--out-test", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--width", type=int, default=16)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--no-shift", action="store_true")
    parser.add_argument("--no-mirror", action="store_true")
    parser.add_argument("--no-jitter", action="store_true")
    args = parser.parse_args(argv)
    cfg = ExtractorConfig(
        fmt=args.format,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        width=args.width,
        augment_shift=not args.no_shift,
        augment_mirror=not args.no_mirror,
        augment_jitter=not args.no_jitter,
    )
    run(args.train, args.test, args.out_train, args.out_test, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
