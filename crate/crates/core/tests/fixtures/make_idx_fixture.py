#!/usr/bin/env python3
"""Write the two-image IDX fixture used by tests/idx_fixture.rs.

Images are 3 rows x 2 columns; pixel (i, r, c) = 40*i + 10*r + 3*c + 1,
plus one saturated pixel so both ends of the byte range appear.
"""
import struct
from pathlib import Path

HERE = Path(__file__).parent
N, ROWS, COLS = 2, 3, 2

pixels = bytearray()
for i in range(N):
    for r in range(ROWS):
        for c in range(COLS):
            pixels.append(40 * i + 10 * r + 3 * c + 1)
pixels[-1] = 255
pixels[0] = 0

(HERE / "two-images-idx3-ubyte").write_bytes(
    struct.pack(">IIII", 0x00000803, N, ROWS, COLS) + bytes(pixels)
)
(HERE / "two-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x00000801, N) + bytes([7, 2]))
