"""Counter-based random streams keyed by (seed, purpose, index...).

Every sampler takes an ``RngStream`` (or a plain ``numpy.random.Generator``).
Streams are Philox generators whose key is derived from the root seed and a
tuple of labels, so replica ``i`` of purpose ``"rayknight"`` draws the same
numbers whether it runs first, last, or in another process.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream", "as_generator"]


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream indices must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8")) | (1 << 32)


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple = ()
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def child(self, *labels) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(labels))

    @property
    def generator(self) -> np.random.Generator:
        # Lazily built and cached; the dataclass is frozen, hence object.__setattr__.
        if self._gen is None:
            ss = np.random.SeedSequence(
                entropy=int(self.seed), spawn_key=tuple(_label_word(k) for k in self.key)
            )
            object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))
        return self._gen

    @property
    def counter(self) -> int:
        state = self.generator.bit_generator.state["state"]["counter"]
        return int(sum(int(w) << (64 * i) for i, w in enumerate(state)))

    def key_string(self) -> str:
        return "/".join(str(k) for k in self.key)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot make a generator from {type(rng).__name__}")
