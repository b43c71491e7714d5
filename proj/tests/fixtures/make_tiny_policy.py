#!/usr/bin/env python3
"""Writes tiny_policy.bin: a 3-2-1 policy in the little-endian weight format."""
import struct
import sys
import zlib

W1 = [[0.5, -1.25, 2.0], [0.0, 0.75, -0.125]]
B1 = [0.25, -0.5]
W2 = [[1.5, -2.0]]
B2 = [0.0625]
LOG_STD = [-0.5]


def encode():
    out = b"RNDP" + struct.pack("<II", 1, 2)
    for w, b in ((W1, B1), (W2, B2)):
        out += struct.pack("<II", len(w), len(w[0]))
        for row in w:
            out += struct.pack("<%dd" % len(row), *row)
        out += struct.pack("<%dd" % len(b), *b)
    out += struct.pack("<%dd" % len(LOG_STD), *LOG_STD)
    return out + struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)


if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else "tiny_policy.bin"
    with open(path, "wb") as f:
        f.write(encode())
