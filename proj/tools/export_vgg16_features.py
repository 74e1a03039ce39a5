"""Write torchvision's ImageNet VGG-16 conv weights (up to relu3_3) as a ULWVGG16 v1 file."""

import argparse
import struct
import sys


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output")
    args = parser.parse_args()

    from torchvision.models import VGG16_Weights, vgg16

    features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
    convs = [m for m in features if m.__class__.__name__ == "Conv2d"][:7]
    with open(args.output, "wb") as f:
        f.write(b"ULWVGG16")
        f.write(struct.pack("<I", 1))
        for conv in convs:
            f.write(conv.weight.detach().numpy().astype("<f4").tobytes())
            f.write(conv.bias.detach().numpy().astype("<f4").tobytes())
    print(f"wrote {len(convs)} layers to {args.output}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
