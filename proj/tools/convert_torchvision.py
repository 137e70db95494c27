#!/usr/bin/env python3
"""Convert torchvision VGG16/VGG19 ImageNet weights into MVCW archives.

Usage:
    python3 tools/convert_torchvision.py --out weights/
    python3 tools/convert_torchvision.py --out weights/ --state-dict vgg16.pth --arch vgg16

Without --state-dict the weights come from torchvision's model zoo, which
needs network access once; the C++ side never downloads anything.
"""

import argparse
import pathlib
import struct

import numpy as np

LAYERS = {
    "vgg16": [0, 2, 5, 7, 10, 12, 14, 17, 19, 21],
    "vgg19": [0, 2, 5, 7, 10, 12, 14, 16, 19],
}
MAGIC = b"MVCW"
VERSION = 1
F64 = 1


def _put_u32(f, v):
    f.write(struct.pack("<I", v))


def _put_str(f, s):
    data = s.encode()
    _put_u32(f, len(data))
    f.write(data)


def write_archive(path, schema, tensors):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        _put_u32(f, VERSION)
        _put_str(f, schema)
        _put_u32(f, len(tensors))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            _put_str(f, name)
            f.write(bytes([F64]))
            _put_u32(f, arr.ndim)
            for d in arr.shape:
                _put_u32(f, d)
            f.write(arr.tobytes())


def load_state_dict(arch, state_dict_path):
    import torch

    if state_dict_path:
        return torch.load(state_dict_path, map_location="cpu")
    import torchvision

    weights = {"vgg16": torchvision.models.VGG16_Weights.IMAGENET1K_V1,
               "vgg19": torchvision.models.VGG19_Weights.IMAGENET1K_V1}[arch]
    return getattr(torchvision.models, arch)(weights=weights).state_dict()


def convert(arch, state_dict):
    tensors = {}
    for idx in LAYERS[arch]:
        for part in ("weight", "bias"):
            key = f"features.{idx}.{part}"
            if key not in state_dict:
                raise KeyError(f"{key} missing from the {arch} state dict")
            tensors[key] = state_dict[key].detach().double().numpy()
    return tensors


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--arch", choices=sorted(LAYERS), action="append",
                        help="backbone(s) to convert (default: both)")
    parser.add_argument("--state-dict", help="local .pth state dict instead of the model zoo")
    args = parser.parse_args()
    arches = args.arch or sorted(LAYERS)
    if args.state_dict and len(arches) != 1:
        parser.error("--state-dict needs exactly one --arch")
    for arch in arches:
        tensors = convert(arch, load_state_dict(arch, args.state_dict))
        out = pathlib.Path(args.out) / f"{arch}_trim.mvcw"
        write_archive(out, f"muviecast.{arch}_trim/v1", tensors)
        count = sum(t.size for t in tensors.values())
        print(f"wrote {out} ({count} parameters)")


if __name__ == "__main__":
    main()
