"""
Counter-based random streams
============================

Every random draw in the simulator is addressed by a key such as
(seed, image id, purpose). The key is hashed into a Philox key, and position
i in the stream is Philox counter i. A draw therefore depends only on its
address, never on how many draws came before it or in which order images are
processed.
"""

from __future__ import annotations
from hashlib import blake2b
from typing import Union
import numpy as np

KeyPart = Union[int, str]


def _philox_key(parts: tuple) -> int:
    h = blake2b(digest_size=16)
    for part in parts:
        token = f'{type(part).__name__}:{part}'.encode('utf-8')
        h.update(len(token).to_bytes(4, 'little'))
        h.update(token)
    return int.from_bytes(h.digest(), 'little')


def stream(*parts: KeyPart) -> np.random.Generator:
    """
    Generator keyed by the given address parts.

    stream(7, 'img_001', 'detect').random(n)[i] is the same number however
    often and in whatever order it is requested.
    """
    return np.random.Generator(np.random.Philox(key=_philox_key(parts)))


def uniforms(n: int, *parts: KeyPart) -> np.ndarray:
    """First n uniforms in [0, 1) of the keyed stream"""
    if n <= 0:
        return np.zeros(0)
    return stream(*parts).random(n)


def derive_seed(*parts: KeyPart) -> int:
    """64-bit seed derived from an address, for child configurations"""
    return _philox_key(parts) & 0xFFFFFFFFFFFFFFFF
