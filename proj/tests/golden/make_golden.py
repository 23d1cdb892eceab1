#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the golden files from an independent Python model of the
container layout and the range coder.  Run from this directory."""

import struct

TOP = 1 << 24
PREC = 16


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = 0xFFFFFFFF
        self.cache = 0
        self.pending = 1
        self.first = True
        self.out = bytearray()

    def encode(self, cum, freq, total_bits=PREC):
        step = self.range >> total_bits
        self.low += step * cum
        self.range = step * freq
        while self.range < TOP:
            self.range = (self.range << 8) & 0xFFFFFFFF
            self.shift_low()

    def encode_bits(self, value, nbits):
        while nbits > 0:
            chunk = min(nbits, 16)
            nbits -= chunk
            self.encode((value >> nbits) & ((1 << chunk) - 1), 1, chunk)

    def shift_low(self):
        if (self.low & 0xFFFFFFFF) < 0xFF000000 or (self.low >> 32) != 0:
            carry = self.low >> 32
            byte = self.cache
            while True:
                if not self.first:
                    self.out.append((byte + carry) & 0xFF)
                self.first = False
                byte = 0xFF
                self.pending -= 1
                if self.pending == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.pending += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def finish(self):
        for _ in range(5):
            self.shift_low()
        return bytes(self.out)


# Table: values -2..2 plus escape, frequencies sum to 1 << 16.
OFFSET = -2
FREQS = [4000, 16000, 30000, 12000, 3000, 536]
CDF = [0]
for f in FREQS:
    CDF.append(CDF[-1] + f)
assert CDF[-1] == 1 << PREC

VALUES = [0, 1, -1, 0, 0, 2, -2, 5, -9, 0, 1, 1, 300, -70000, 3, 0, -1, 2, 0, 0,
          -3, 1, 0, 65535, 0, -2, 1]


def encode_values(values):
    enc = RangeEncoder()
    esc = len(FREQS) - 1
    vmin, vmax = OFFSET, OFFSET + esc - 1
    for v in values:
        if vmin <= v <= vmax:
            s = v - OFFSET
            enc.encode(CDF[s], FREQS[s])
            continue
        enc.encode(CDF[esc], FREQS[esc])
        above = v > vmax
        distance = v - vmax if above else vmin - v
        width = distance.bit_length()
        enc.encode_bits(1 if above else 0, 1)
        enc.encode_bits(width - 1, 5)
        enc.encode_bits(distance & ((1 << (width - 1)) - 1), width - 1)
    return enc.finish()


def container():
    header = b"PVQC" + struct.pack(">BBBHBHHBB", 1, 2, 0, round(0.25 * 65535), 2, 100, 77, 28, 51)
    z = bytes(range(10))
    y = bytes((i * 37 + 11) & 0xFF for i in range(300))
    return header + struct.pack(">I", len(z)) + z + struct.pack(">I", len(y)) + y


def main():
    with open("symbols.txt", "w") as f:
        f.write("# offset freqs... ; values...\n")
        f.write(" ".join(str(x) for x in [OFFSET] + FREQS) + "\n")
        f.write(" ".join(str(v) for v in VALUES) + "\n")
    with open("symbols.bin", "wb") as f:
        f.write(encode_values(VALUES))
    with open("container.bin", "wb") as f:
        f.write(container())


if __name__ == "__main__":
    main()
