#!/usr/bin/env python3
"""Train the 32x32 RGB classifier on a procedural shape dataset and export
weights plus a small held-out image set for the end-to-end tests.

The ten classes are parametric shapes (filled disc, square outline, triangle,
cross, ring, horizontal bars, vertical bars, diagonal stripe, checkerboard,
dot grid) rendered with random geometry, colors, and noise.  The classifier
architecture is the package's reference network with rectified convolutions.

Development tool only: requires torch, which the package itself does not.

Usage: python3 scripts/train_classifier32.py [--out-dir assets] [--epochs 4]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import edgexai as ex  # noqa: E402


def _coords() -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:32, 0:32]
    return ys.astype(np.float64), xs.astype(np.float64)


def render_shape(cls: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, 32, 32) image in [0, 1] for the given class."""
    ys, xs = _coords()
    cy, cx = rng.uniform(10, 22, 2)
    r = rng.uniform(6, 11)
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    if cls == 0:  # filled disc
        m = d2 <= r * r
    elif cls == 1:  # square outline
        half = r * 0.8
        inside = (np.abs(ys - cy) <= half) & (np.abs(xs - cx) <= half)
        inner = (np.abs(ys - cy) <= half - 3) & (np.abs(xs - cx) <= half - 3)
        m = inside & ~inner
    elif cls == 2:  # upward triangle
        h = r * 1.2
        m = (ys >= cy - h / 2) & (ys <= cy + h / 2) & \
            (np.abs(xs - cx) <= (ys - (cy - h / 2)) * 0.6)
    elif cls == 3:  # plus-shaped cross
        t = max(2.0, r * 0.3)
        m = ((np.abs(ys - cy) <= t) & (np.abs(xs - cx) <= r)) | \
            ((np.abs(xs - cx) <= t) & (np.abs(ys - cy) <= r))
    elif cls == 4:  # ring
        m = (d2 <= r * r) & (d2 >= (r - 3) ** 2)
    elif cls == 5:  # horizontal bars
        period = int(rng.integers(4, 8))
        m = ((ys.astype(int) + int(rng.integers(0, period))) % period) < period // 2
    elif cls == 6:  # vertical bars
        period = int(rng.integers(4, 8))
        m = ((xs.astype(int) + int(rng.integers(0, period))) % period) < period // 2
    elif cls == 7:  # diagonal stripe
        w = rng.uniform(2, 5)
        off = rng.uniform(-10, 10)
        m = np.abs((ys - xs) * 0.7071 - off) <= w
    elif cls == 8:  # checkerboard
        cell = int(rng.integers(3, 6))
        m = (((ys.astype(int) // cell) + (xs.astype(int) // cell)) % 2) == 0
    else:  # dot grid
        pitch = int(rng.integers(6, 9))
        oy, ox = rng.integers(0, pitch, 2)
        m = ((ys.astype(int) + oy) % pitch <= 1) & ((xs.astype(int) + ox) % pitch <= 1)

    fg = rng.uniform(0.55, 1.0, 3)
    bg = rng.uniform(0.0, 0.35, 3)
    img = np.empty((3, 32, 32))
    for ch in range(3):
        img[ch] = np.where(m, fg[ch], bg[ch])
    img += rng.normal(0, 0.03, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_dataset(n_per_class: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for cls in range(10):
        for _ in range(n_per_class):
            xs.append(render_shape(cls, rng))
            ys.append(cls)
    order = rng.permutation(len(xs))
    return np.stack(xs)[order].astype(np.float32), np.asarray(ys)[order]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default=str(Path(__file__).resolve().parent.parent / "assets"))
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=600)
    ap.add_argument("--seed", type=int, default=17)
    args = ap.parse_args()

    try:
        import torch
        import torch.nn as nn
    except ImportError:
        print("this script needs torch (development tool only)", file=sys.stderr)
        return 1

    torch.manual_seed(args.seed)
    out_dir = Path(args.out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    x_train, y_train = make_dataset(args.per_class, args.seed)
    x_val, y_val = make_dataset(50, args.seed + 1)

    net = nn.Sequential(
        nn.Conv2d(3, 32, 3, padding=1), nn.ReLU(),
        nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(),
        nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(4096, 128), nn.ReLU(),
        nn.Linear(128, 10),
    )
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    xt = torch.from_numpy(x_train)
    yt = torch.from_numpy(y_train)
    for epoch in range(args.epochs):
        perm = torch.randperm(len(xt))
        total, hits = 0.0, 0
        for i in range(0, len(xt), 128):
            idx = perm[i:i + 128]
            opt.zero_grad()
            out = net(xt[idx])
            loss = loss_fn(out, yt[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            hits += int((out.argmax(1) == yt[idx]).sum())
        print(f"epoch {epoch}: loss {total / len(xt):.4f} train acc {hits / len(xt):.3f}")

    net.eval()
    with torch.no_grad():
        val_out = net(torch.from_numpy(x_val)).argmax(1).numpy()
    print(f"float val acc: {(val_out == y_val).mean():.3f}")

    # export in package layer order: convs at 0, 1, 3, 4; FCs at 6, 8
    spec = ex.image_classifier(fused_relu=True)
    mods = [m for m in net if isinstance(m, (nn.Conv2d, nn.Linear))]
    fparams = {}
    for (layer_idx, _), mod in zip(spec.parameterized(), mods):
        fparams[layer_idx] = (mod.weight.detach().numpy().astype(np.float64),
                              mod.bias.detach().numpy().astype(np.float64))
    blob = ex.write_weight_file(spec, fparams)
    weight_path = out_dir / "classifier32_relu.weights.bin"
    weight_path.write_bytes(blob)
    print(f"wrote {weight_path} ({len(blob)} bytes)")

    # quantized-engine agreement on the validation set
    weights = ex.load_weights(blob, spec, ex.FxpFormat(8))
    agree = 0
    for i in range(len(x_val)):
        image = ex.Tensor.from_floats(x_val[i].astype(np.float64), ex.FxpFormat(8))
        logits, _ = ex.forward_pass(spec, weights, image)
        agree += int(np.argmax(logits.raw) == val_out[i])
    print(f"fixed-point vs float argmax agreement: {agree}/{len(x_val)}")

    # held-out test images, one per class, plus one PPM copy
    rng = np.random.default_rng(args.seed + 2)
    for cls in range(10):
        img = render_shape(cls, rng).astype("<f4")
        (out_dir / "images" / f"img_{cls:02d}.f32").write_bytes(img.tobytes())
    sample = np.clip(np.round(render_shape(3, rng) * 255.0), 0, 255).astype(np.uint8)
    with open(out_dir / "images" / "sample.ppm", "wb") as f:
        f.write(b"P6\n32 32\n255\n")
        f.write(sample.transpose(1, 2, 0).tobytes())
    print(f"wrote {out_dir / 'images'} (10 raw float32 images + sample.ppm)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
