#!/usr/bin/env python3
"""Convert torchvision VGG19 convolution weights into an lfsr tensor archive.

    python tools/export_vgg19.py --out vgg19.lfsr
    python tools/export_vgg19.py --state-dict vgg19-dcbb9e9d.pth --out vgg19.lfsr

The archive holds convX_Y.weight (O, I, 3, 3) and convX_Y.bias (1, O, 1, 1)
as float64 and is read by `perceptual.weights_source`.
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"LFSRARC\0"
VERSION = 1

# features.<index> of torchvision's vgg19 for each convolution
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]


def conv_names():
    names = []
    for b, n in enumerate([2, 2, 4, 4, 4], start=1):
        for c in range(1, n + 1):
            names.append(f"conv{b}_{c}")
    return names


def load_state_dict(path, random_init):
    import torch
    import torchvision

    if path:
        return torch.load(path, map_location="cpu")
    weights = None if random_init else torchvision.models.VGG19_Weights.IMAGENET1K_V1
    return torchvision.models.vgg19(weights=weights).state_dict()


def write_archive(path, tensors, meta):
    names = sorted(tensors)
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    text = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(text)))
        f.write(text)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="local torchvision vgg19 state dict (.pth); default downloads")
    ap.add_argument("--random-init", action="store_true", help="untrained weights, for format checks only")
    args = ap.parse_args(argv)

    sd = load_state_dict(args.state_dict, args.random_init)
    tensors = {}
    for name, idx in zip(conv_names(), CONV_INDICES):
        w = sd[f"features.{idx}.weight"].detach().cpu().numpy().astype(np.float64)
        b = sd[f"features.{idx}.bias"].detach().cpu().numpy().astype(np.float64)
        tensors[name + ".weight"] = w
        tensors[name + ".bias"] = b.reshape(1, -1, 1, 1)
    meta = {"kind": "vgg19", "source": args.state_dict or ("random" if args.random_init else "torchvision IMAGENET1K_V1")}
    write_archive(args.out, tensors, meta)
    print(f"wrote {len(tensors)} tensors to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
