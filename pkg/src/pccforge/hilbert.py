"""3D Hilbert curve indexing and key-point serialization.

Uses the Gray-code / bit-transposition construction (one fixed canonical
orientation). Cells that are consecutive along the curve are always axis
neighbors, which is the locality property the serializer relies on.
"""

from __future__ import annotations

import numpy as np

_DIMS = 3


def _axes_to_transpose(coords: list[int], order: int) -> list[int]:
    x = list(coords)
    q = 1 << (order - 1)
    while q > 1:
        p = q - 1
        for i in range(_DIMS):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, _DIMS):
        x[i] ^= x[i - 1]
    t = 0
    q = 1 << (order - 1)
    while q > 1:
        if x[_DIMS - 1] & q:
            t ^= q - 1
        q >>= 1
    return [v ^ t for v in x]


def _transpose_to_axes(x: list[int], order: int) -> list[int]:
    x = list(x)
    n = 2 << (order - 1)
    t = x[_DIMS - 1] >> 1
    for i in range(_DIMS - 1, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    q = 2
    while q != n:
        p = q - 1
        for i in range(_DIMS - 1, -1, -1):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q <<= 1
    return x


def hilbert_index(cell: tuple[int, int, int], order: int) -> int:
    """Position of a grid cell along the Hilbert curve of the given order.

    Coordinates must lie in [0, 2**order); the result lies in
    [0, 2**(3*order)).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    side = 1 << order
    coords = [int(c) for c in cell]
    for c in coords:
        if not 0 <= c < side:
            raise ValueError(f"cell {tuple(cell)} outside [0, {side}) grid for order {order}")
    x = _axes_to_transpose(coords, order)
    h = 0
    for t in range(order - 1, -1, -1):
        for i in range(_DIMS):
            h = (h << 1) | ((x[i] >> t) & 1)
    return h


def hilbert_decode(h: int, order: int) -> tuple[int, int, int]:
    """Inverse of hilbert_index."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not 0 <= h < 1 << (3 * order):
        raise ValueError(f"index {h} outside [0, 2**{3 * order})")
    x = [0, 0, 0]
    for t in range(order - 1, -1, -1):
        for i in range(_DIMS):
            bit = (h >> (3 * t + (_DIMS - 1 - i))) & 1
            x[i] |= bit << t
    ax = _transpose_to_axes(x, order)
    return ax[0], ax[1], ax[2]


def quantize_unit_cube(keys: np.ndarray, order: int) -> np.ndarray:
    """Map points from [-1, 1]^3 (clamped) onto the 2**order integer grid."""
    side = 1 << order
    cells = np.floor((np.asarray(keys, dtype=np.float64) + 1.0) * 0.5 * side).astype(np.int64)
    return np.clip(cells, 0, side - 1)


def serialize_keypoints(keys: np.ndarray, order: int) -> np.ndarray:
    """Permutation sorting keys by ascending Hilbert index, ties by input order."""
    cells = quantize_unit_cube(keys, order)
    codes = np.array([hilbert_index(tuple(c), order) for c in cells], dtype=np.uint64)
    return np.argsort(codes, kind="stable")
