#!/usr/bin/env python3
"""Cross-checks the C++ forward pass against torchvision on a randomly initialised VGG-19.

Usage: check_torch_parity.py <codeinv executable> <converter script> <work dir>
Exits 77 when torch/torchvision are not installed.
"""

import json
import os
import subprocess
import sys

try:
    import numpy as np
    import torch
    import torchvision  # noqa: F401
except ImportError:
    print("torch not available, skipping")
    sys.exit(77)

import cv2

tool, converter, work = sys.argv[1:4]
os.makedirs(work, exist_ok=True)
weights = os.path.join(work, "vgg19_torch_random.bin")
image_path = os.path.join(work, "probe.png")

subprocess.run([sys.executable, converter, "--random-seed", "3", "--out", weights], check=True)

rng = np.random.default_rng(5)
rgb = rng.integers(0, 256, size=(64, 48, 3), dtype=np.uint8)
cv2.imwrite(image_path, cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))

layers = ["relu1_1", "relu2_2", "relu3_1", "relu4_3", "relu5_1"]
report = json.loads(
    subprocess.run(
        [tool, "inspect", "--weights", weights, "--image", image_path, "--layers", ",".join(layers)],
        check=True,
        capture_output=True,
        text=True,
    ).stdout
)
ours = {entry["layer"]: np.array(entry["channel_sums"]) for entry in report["layers"]}

torch.manual_seed(3)
features = torchvision.models.vgg19(weights=None).features.eval().double()
mean = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float64).view(1, 3, 1, 1)
std = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float64).view(1, 3, 1, 1)
x = (torch.from_numpy(rgb).permute(2, 0, 1).unsqueeze(0).double() / 255.0 - mean) / std

# relu positions inside torchvision's features
relu_index = {}
block, conv = 1, 0
for i, module in enumerate(features):
    if isinstance(module, torch.nn.Conv2d):
        conv += 1
    elif isinstance(module, torch.nn.ReLU):
        relu_index[i] = f"relu{block}_{conv}"
    elif isinstance(module, torch.nn.MaxPool2d):
        block, conv = block + 1, 0

worst = 0.0
with torch.no_grad():
    for i, module in enumerate(features):
        x = module(x)
        name = relu_index.get(i)
        if name in ours:
            sums = x[0].sum(dim=(1, 2)).numpy()
            err = np.linalg.norm(sums - ours[name]) / max(np.linalg.norm(sums), 1e-30)
            print(f"{name}: shape {tuple(x.shape[1:])}, relative error {err:.3e}")
            worst = max(worst, err)

# weights are stored as float32, so agreement is limited to single precision
if worst > 1e-4:
    print(f"FAIL: worst relative error {worst:.3e}")
    sys.exit(1)
print(f"OK: worst relative error {worst:.3e}")
