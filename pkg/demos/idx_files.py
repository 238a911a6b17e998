"""Reading MNIST-style IDX files.

Writes a tiny synthetic image/label pair in the IDX binary layout
(big-endian magic, big-endian dimension sizes, unsigned byte payload),
loads it back, and shows the pixel rescale to [-1, 1]. Point the loader at
real MNIST files (train-images-idx3-ubyte etc.) for actual data.

Run from the repo root:  python3 demos/idx_files.py
"""

import os
import struct

import numpy as np

from pguide.data import idx_load

OUT = "demo_out"


def main():
    os.makedirs(OUT, exist_ok=True)
    img_path = os.path.join(OUT, "toy-images-idx3-ubyte")
    lbl_path = os.path.join(OUT, "toy-labels-idx1-ubyte")

    images = np.zeros((3, 4, 4), dtype=np.uint8)
    images[0, 0, 0] = 255          # one bright pixel
    images[1] = 128                # mid gray
    images[2] = np.arange(16, dtype=np.uint8).reshape(4, 4) * 17
    labels = [7, 0, 3]

    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, 3, 4, 4))
        f.write(images.tobytes())
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {img_path} and {lbl_path}")

    x = idx_load(img_path, "images")
    y = idx_load(lbl_path, "labels")
    print(f"images tensor: {x.shape} (rows of flattened pixels)")
    print(f"labels: {y.tolist()}")
    print(f"byte 255 -> {x[0, 0]}, byte 128 -> {x[1, 0]:.6f}, byte 0 -> {x[0, 1]}")
    print("rescale is x/127.5 - 1, so the range is exactly [-1, 1]")


if __name__ == "__main__":
    main()
