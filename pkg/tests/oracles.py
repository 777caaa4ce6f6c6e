"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math

_POLY = 0x82F63B78  # reflected Castagnoli


def _table():
    t = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        t.append(c)
    return t


_T = _table()


def crc32c_ref(data: bytes, crc: int = 0) -> int:
    c = crc ^ 0xFFFFFFFF
    for b in data:
        c = _T[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


def throughput_ref(capacity, rtt_ms, buffer, threshold, coeff, streams, bg):
    """Effective throughput written out longhand from the model definition."""
    window = buffer * 8 / (rtt_ms / 1000) / 1e6
    share = capacity / (streams + bg)
    per = window if window < share else share
    pen = 1.0 if streams <= threshold else 1.0 / (1.0 + coeff * (streams - threshold))
    return min(streams * per * pen, capacity)


def stream_model_argmax(a, b, c, n_max):
    """Exhaustive integer search; smallest n among exact ties."""
    best_n, best = 1, -1.0
    for n in range(1, n_max + 1):
        v = n / math.sqrt(a * n ** c + b)
        if v > best * (1 + 1e-12):
            best_n, best = n, v
    return best_n


def grid_argmax(fn, axes):
    return max(itertools.product(*axes), key=fn)
