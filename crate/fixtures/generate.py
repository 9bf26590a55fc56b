"""Regenerate the committed fixture: a small conv-BN-ReLU classifier trained on a
synthetic 10-class texture task, exported as SPM plus TNS calibration/test data.

Usage: python3 fixtures/generate.py [--out fixtures/]

The training recipe here is our own and exists only to produce a desk-scale
model for the Rust test suites.
"""

import argparse
import json
import math
import os
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SEED = 20240611
CLASSES = 10
SIDE = 16
CHANNELS = 3


def make_textures(rng):
    """Per-class set of three colored gratings (frequency vector, color weights)."""
    classes = []
    for _ in range(CLASSES):
        comps = []
        for _ in range(3):
            theta = rng.uniform(0, math.pi)
            freq = rng.uniform(0.15, 0.45) * 2 * math.pi
            color = rng.normal(0, 1, size=CHANNELS)
            comps.append((freq * math.cos(theta), freq * math.sin(theta), color))
        classes.append(comps)
    return classes


def sample(rng, textures, n, noise):
    ys, xs = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)
    images = np.zeros((n, CHANNELS, SIDE, SIDE), dtype=np.float64)
    labels = rng.integers(0, CLASSES, size=n)
    for i in range(n):
        for fx, fy, color in textures[labels[i]]:
            phase = rng.uniform(0, 2 * math.pi)
            amp = rng.uniform(0.6, 1.4)
            wave = np.sin(fx * xs + fy * ys + phase)
            images[i] += amp * color[:, None, None] * wave[None]
        images[i] += rng.normal(0, noise, size=(CHANNELS, SIDE, SIDE))
    return images.astype(np.float32), labels.astype(np.uint32)


class FixtureCnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(CHANNELS, 32, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(32)
        self.conv2 = nn.Conv2d(32, 64, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(64)
        self.fc = nn.Linear(64, CLASSES)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.max_pool2d(x, 2, 2)
        x = F.relu(self.bn2(self.conv2(x)))
        x = x.mean(dim=(2, 3))
        return self.fc(x)


def write_tns(path, array):
    array = np.ascontiguousarray(array)
    code = {np.dtype(np.float32): 0, np.dtype(np.uint32): 1}[array.dtype]
    with open(path, "wb") as f:
        f.write(b"TNS1")
        f.write(struct.pack("<II", code, array.ndim))
        for d in array.shape:
            f.write(struct.pack("<Q", d))
        f.write(array.astype(array.dtype.newbyteorder("<")).tobytes())


def write_spm(path, model):
    sd = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()
          if not k.endswith("num_batches_tracked")}
    nodes = [
        {"name": "conv1", "op": "conv2d", "inputs": ["input"], "weight": "conv1.weight",
         "bias": None, "stride": 1, "padding": 1},
        {"name": "bn1", "op": "batchnorm2d", "inputs": ["conv1"], "weight": "bn1.weight",
         "bias": "bn1.bias", "running_mean": "bn1.running_mean",
         "running_var": "bn1.running_var", "eps": 1e-5},
        {"name": "relu1", "op": "relu", "inputs": ["bn1"]},
        {"name": "pool1", "op": "maxpool2d", "inputs": ["relu1"], "kernel": 2, "stride": 2,
         "padding": 0},
        {"name": "conv2", "op": "conv2d", "inputs": ["pool1"], "weight": "conv2.weight",
         "bias": None, "stride": 1, "padding": 1},
        {"name": "bn2", "op": "batchnorm2d", "inputs": ["conv2"], "weight": "bn2.weight",
         "bias": "bn2.bias", "running_mean": "bn2.running_mean",
         "running_var": "bn2.running_var", "eps": 1e-5},
        {"name": "relu2", "op": "relu", "inputs": ["bn2"]},
        {"name": "gap", "op": "globalavgpool", "inputs": ["relu2"]},
        {"name": "flat", "op": "flatten", "inputs": ["gap"]},
        {"name": "fc", "op": "linear", "inputs": ["flat"], "weight": "fc.weight",
         "bias": "fc.bias"},
    ]
    tensors = []
    blob = bytearray()
    for name in sorted(sd):
        data = sd[name].astype("<f4").tobytes()
        tensors.append({"name": name, "dtype": "f32", "dims": list(sd[name].shape),
                        "offset": len(blob), "length": len(data)})
        blob += data
    manifest = {
        "format_version": 1,
        "graph": {"arch": "fixture_cnn", "num_classes": CLASSES,
                  "input_dims": [CHANNELS, SIDE, SIDE], "output": "fc", "nodes": nodes},
        "tensors": tensors,
    }
    text = json.dumps(manifest, indent=1, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(b"SPMODEL1")
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        f.write(bytes(blob))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=os.path.dirname(os.path.abspath(__file__)))
    parser.add_argument("--noise", type=float, default=1.6)
    parser.add_argument("--epochs", type=int, default=12)
    args = parser.parse_args()

    torch.manual_seed(SEED)
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(SEED)
    textures = make_textures(rng)
    train_x, train_y = sample(rng, textures, 8000, args.noise)
    calib_x, _ = sample(rng, textures, 128, args.noise)
    test_x, test_y = sample(rng, textures, 1000, args.noise)

    model = FixtureCnn()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    tx, ty = torch.from_numpy(train_x), torch.from_numpy(train_y.astype(np.int64))
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(tx))
        for i in range(0, len(tx), 64):
            idx = perm[i:i + 64]
            loss = F.cross_entropy(model(tx[idx]), ty[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()

    # Exact cumulative BN statistics over the training set.
    for m in model.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.reset_running_stats()
            m.momentum = None
    model.train()
    with torch.no_grad():
        for i in range(0, len(tx), 500):
            model(tx[i:i + 500])
    model.eval()

    with torch.no_grad():
        logits = model(torch.from_numpy(test_x))
        acc = 100.0 * (logits.argmax(1).numpy() == test_y).mean()
        probes = test_x[:16]
        probe_logits = model(torch.from_numpy(probes)).numpy()
    print(f"test accuracy {acc:.2f}%")

    os.makedirs(args.out, exist_ok=True)
    write_spm(os.path.join(args.out, "fixture.spm"), model)
    write_tns(os.path.join(args.out, "calib.tns"), calib_x)
    write_tns(os.path.join(args.out, "test_images.tns"), test_x)
    write_tns(os.path.join(args.out, "test_labels.tns"), test_y)
    write_tns(os.path.join(args.out, "probe_inputs.tns"), probes)
    write_tns(os.path.join(args.out, "probe_logits.tns"), probe_logits.astype(np.float32))
    n_params = sum(p.numel() for p in model.parameters())
    sidecar = {
        "format_version": 1,
        "source": "fixtures/generate.py synthetic texture recipe",
        "arch": "fixture_cnn",
        "dataset": "synthetic_textures10",
        "num_params": n_params,
        "recorded_accuracy": round(float(acc), 4),
        "test_count": int(len(test_y)),
        "calib_count": int(len(calib_x)),
        "preprocessing": {"baked": True, "noise_std": args.noise,
                          "calib_mean": float(calib_x.mean()), "calib_std": float(calib_x.std())},
        "seed": SEED,
        "probe_inputs": "probe_inputs.tns",
        "probe_logits": "probe_logits.tns",
    }
    with open(os.path.join(args.out, "fixture.json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
