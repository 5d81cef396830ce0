#!/usr/bin/env python3
"""Convert torchvision VGG-19 weights into the codeinv weights format.

torchvision feeds the network (rgb / 255 - mean) / std. codeinv feeds it rgb - 255 * mean,
so the 1 / (255 * std) factor is folded into conv1_1 and the result is exactly equivalent.

    python convert_torchvision_vgg19.py --state-dict vgg19-dcbb9e9d.pth --out vgg19.bin
    python convert_torchvision_vgg19.py --download --out vgg19.bin     # needs network access
"""

import argparse
import hashlib
import struct
import sys

MAGIC = b"CINVWTS1"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# index into vgg19.features of each convolution, in trunk order
CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34)
CONV_NAMES = tuple(
    f"conv{block}_{i}" for block, n in zip(range(1, 6), (2, 2, 4, 4, 4)) for i in range(1, n + 1)
)


def load_features(args):
    import torch
    import torchvision

    model = torchvision.models.vgg19(weights=None)
    if args.download:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    elif args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
        model.load_state_dict(state)
    elif args.random_seed is not None:
        torch.manual_seed(args.random_seed)
        model = torchvision.models.vgg19(weights=None)
    else:
        sys.exit("pass --state-dict, --download or --random-seed")
    return model.features.eval()


def convert(features, out_path):
    mean = [255.0 * m for m in IMAGENET_MEAN]
    with open(out_path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<3d", *mean))
        out.write(struct.pack("<I", len(CONV_INDICES)))
        for name, index in zip(CONV_NAMES, CONV_INDICES):
            conv = features[index]
            weight = conv.weight.detach().double().clone()
            if name == "conv1_1":
                for c, s in enumerate(IMAGENET_STD):
                    weight[:, c] /= 255.0 * s
            o, i, kh, kw = weight.shape
            encoded = name.encode()
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<4I", o, i, kh, kw))
            out.write(weight.float().numpy().astype("<f4").tobytes())
            out.write(conv.bias.detach().float().numpy().astype("<f4").tobytes())
    digest = hashlib.sha256(open(out_path, "rb").read()).hexdigest()
    print(f"wrote {out_path} sha256 {digest}")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--state-dict", help="torchvision vgg19 .pth state dict")
    parser.add_argument("--download", action="store_true", help="fetch the ImageNet weights through torchvision")
    parser.add_argument("--random-seed", type=int, help="randomly initialised network (for tests)")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    convert(load_features(args), args.out)


if __name__ == "__main__":
    main()
