"""Named, counter-based random streams.

Every random draw in the package comes from a stream addressed by a master
seed plus a tuple of keys, e.g. ``stream(seed, "noise", site, round, name)``.
Streams are Philox generators, so two streams never share state and the
result of a draw does not depend on which thread or in which order the
streams are consumed.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean stream keys are ambiguous")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Return the generator for ``(seed, *keys)``.

    The same address always yields the same sequence.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class StreamFactory:
    """Binds a master seed and a key prefix; call with extra keys for a stream."""

    def __init__(self, seed: int, *prefix: Key):
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    def __call__(self, *keys: Key) -> np.random.Generator:
        return stream(self.seed, *self.prefix, *keys)

    def child(self, *keys: Key) -> "StreamFactory":
        return StreamFactory(self.seed, *self.prefix, *keys)

    def __repr__(self) -> str:
        return f"StreamFactory(seed={self.seed}, prefix={self.prefix!r})"
