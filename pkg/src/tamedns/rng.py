"""Counter-based Gaussian increments keyed by (seed, path, step, direction).

Each path owns a Philox stream keyed by (seed, path_id). Step s consumes the
counter blocks [s * B, (s + 1) * B) where B covers all directions of one
step, so any step of any path can be regenerated independently of the order
in which steps or paths are drawn.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter value


def _philox(seed: int, path_id: int) -> np.random.Philox:
    key = np.array([int(seed) & _MASK64, int(path_id) & _MASK64], dtype=np.uint64)
    return np.random.Philox(key=key)


def _blocks_per_step(n_dir: int) -> int:
    # Box-Muller needs one uniform per Gaussian; pairs share two uniforms
    words = 2 * ((n_dir + 1) // 2)
    return max(1, -(-words // _WORDS_PER_BLOCK))


def _gaussians_from_words(words: np.ndarray, n: int) -> np.ndarray:
    u = ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty(u.shape)
    z[..., 0::2] = rad * np.cos(ang)
    z[..., 1::2] = rad * np.sin(ang)
    return z[..., :n]


class NoiseStream:
    """Standard normals for one path; ``increments`` scales them by sqrt(dt)."""

    def __init__(self, seed: int, path_id: int, n_dir: int):
        if n_dir < 0:
            raise ValueError("n_dir must be nonnegative")
        self.seed = int(seed)
        self.path_id = int(path_id)
        self.n_dir = int(n_dir)
        self.blocks = _blocks_per_step(self.n_dir)

    def normals(self, step0: int, count: int) -> np.ndarray:
        """Standard normals for steps [step0, step0 + count), shape (count, n_dir)."""
        if count <= 0 or self.n_dir == 0:
            return np.zeros((max(count, 0), self.n_dir))
        bitgen = _philox(self.seed, self.path_id)
        bitgen.advance(step0 * self.blocks)
        words = bitgen.random_raw(count * self.blocks * _WORDS_PER_BLOCK)
        words = words.reshape(count, self.blocks * _WORDS_PER_BLOCK)
        return _gaussians_from_words(words, self.n_dir)

    def increments(self, step0: int, count: int, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError("dt must be positive")
        return np.sqrt(dt) * self.normals(step0, count)


def brownian_increments(rng_state, dt: float, count: int) -> np.ndarray:
    """``count`` independent N(0, dt) draws.

    ``rng_state`` is a (seed, path_id) pair or an int seed; the draws equal
    the first ``count`` directions of step 0 of the matching stream.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if count == 0:
        return np.zeros(0)
    seed, path_id = rng_state if isinstance(rng_state, tuple) else (rng_state, 0)
    return NoiseStream(seed, path_id, count).increments(0, 1, dt)[0]
