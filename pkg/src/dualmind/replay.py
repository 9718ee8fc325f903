"""Episode storage and fixed-length sequence sampling.

Rows are stored aligned: row ``t`` holds ``(o_t, a_{t-1}, r_{t-1})`` with a
zero action and zero reward on row 0, so a recurrent update that consumes row
``t`` sees the action that led to ``o_t``.  An environment episode with ``T``
decision steps therefore has ``T + 1`` rows, and ``Episode.length`` counts rows.

On-disk layout (all little-endian)::

    magic   8 bytes  b"DMWMRPLY"
    version u32
    obs_dim u32, action_dim u32, n_episodes u32
    per episode:
        rows u32
        observations f32[rows * obs_dim]
        actions      f32[rows * action_dim]
        rewards      f32[rows]
"""

from __future__ import annotations

import io
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (BadMagicError, InputError, NotReadyError,
                     TruncatedFileError, VersionError)

MAGIC = b"DMWMRPLY"
FORMAT_VERSION = 1
DEFAULT_CAPACITY = 1_000_000


@dataclass
class Episode:
    observations: np.ndarray  # (rows, obs_dim)
    actions: np.ndarray       # (rows, action_dim); row 0 is zeros
    rewards: np.ndarray       # (rows,); row 0 is zero

    def __post_init__(self):
        self.observations = np.ascontiguousarray(self.observations, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=np.float32).reshape(-1)
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise InputError("observations and actions must be 2-D")
        n = len(self.observations)
        if len(self.actions) != n or len(self.rewards) != n:
            raise InputError(
                f"aligned arrays required, got {n}/{len(self.actions)}/{len(self.rewards)} rows")

    @property
    def length(self) -> int:
        return len(self.observations)

    @classmethod
    def from_transitions(cls, observations, actions, rewards) -> "Episode":
        """Build from ``T+1`` observations, ``T`` actions and ``T`` rewards."""
        obs = np.asarray(observations, dtype=np.float32)
        act = np.asarray(actions, dtype=np.float32).reshape(len(obs) - 1, -1)
        rew = np.asarray(rewards, dtype=np.float32).reshape(-1)
        act = np.concatenate([np.zeros((1, act.shape[1]), np.float32), act])
        rew = np.concatenate([np.zeros(1, np.float32), rew])
        return cls(obs, act, rew)

    def equals(self, other: "Episode") -> bool:
        return (np.array_equal(self.observations, other.observations)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))


@dataclass
class SequenceBatch:
    observations: np.ndarray  # (B, L, obs_dim)
    actions: np.ndarray       # (B, L, action_dim)
    rewards: np.ndarray       # (B, L)
    is_first: np.ndarray      # (B, L) bool

    @property
    def shape(self):
        return self.rewards.shape


class ReplayBuffer:
    """FIFO episode store bounded by total stored rows."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = DEFAULT_CAPACITY):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.capacity = int(capacity)
        self.episodes: list[Episode] = []
        self.stored_steps = 0
        self._lock = threading.Lock()
        self._flat = None

    def __len__(self) -> int:
        return len(self.episodes)

    def add_episode(self, episode: Episode) -> "ReplayBuffer":
        if episode.observations.shape[1] != self.obs_dim or episode.actions.shape[1] != self.action_dim:
            raise InputError("episode dimensions do not match the buffer")
        if episode.length < 2:
            raise InputError("episodes need at least two rows")
        for arr in (episode.observations, episode.actions, episode.rewards):
            if not np.all(np.isfinite(arr)):
                raise InputError("episode contains non-finite entries")
        with self._lock:
            episodes = self.episodes + [episode]
            stored = self.stored_steps + episode.length
            while stored > self.capacity and len(episodes) > 1:
                stored -= episodes[0].length
                episodes = episodes[1:]
            # readers holding the old list keep a consistent snapshot
            self.episodes = episodes
            self.stored_steps = stored
        return self

    def sample_sequences(self, batch_size: int, seq_len: int,
                         rng: np.random.Generator) -> SequenceBatch:
        """Draw ``batch_size`` windows uniformly over all valid (episode, offset) pairs.

        Episodes with fewer than ``seq_len`` rows are never sampled.  Raises
        :class:`NotReadyError` when no episode is long enough.
        """
        episodes, flat = self._snapshot()
        lengths = np.array([ep.length for ep in episodes], dtype=np.int64)
        n_valid = np.maximum(lengths - seq_len + 1, 0)
        total = int(n_valid.sum())
        if total == 0:
            raise NotReadyError(
                f"no stored episode has at least {seq_len} rows "
                f"({len(episodes)} episodes stored)")
        draws = rng.integers(0, total, size=batch_size, dtype=np.int64)
        row_offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        _, starts, offsets = _kernels.window_starts(row_offsets, n_valid, draws)
        obs, act, rew = flat
        is_first = np.zeros((batch_size, seq_len), dtype=bool)
        is_first[:, 0] = offsets == 0
        return SequenceBatch(
            _kernels.gather_windows(obs, starts, seq_len),
            _kernels.gather_windows(act, starts, seq_len),
            _kernels.gather_windows(rew, starts, seq_len)[..., 0],
            is_first,
        )

    def _snapshot(self):
        """Episode list plus flat row arrays, consistent with each other."""
        episodes = self.episodes
        cached = self._flat
        if not episodes:
            return episodes, None
        if cached is None or cached[0] is not episodes:
            flat = (np.concatenate([ep.observations for ep in episodes]),
                    np.concatenate([ep.actions for ep in episodes]),
                    np.concatenate([ep.rewards for ep in episodes])[:, None])
            cached = (episodes, flat)
            self._flat = cached
        return cached

    # -- serialisation -----------------------------------------------------
    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        episodes = self.episodes
        out.write(MAGIC)
        out.write(struct.pack("<IIII", FORMAT_VERSION, self.obs_dim, self.action_dim, len(episodes)))
        for ep in episodes:
            out.write(struct.pack("<I", ep.length))
            for arr in (ep.observations, ep.actions, ep.rewards):
                out.write(arr.astype("<f4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, capacity: int = DEFAULT_CAPACITY) -> "ReplayBuffer":
        if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
            raise BadMagicError("not a replay file (bad magic)")
        pos = len(MAGIC)
        header = _take(data, pos, 16, "header")
        version, obs_dim, act_dim, n_eps = struct.unpack("<IIII", header)
        if version != FORMAT_VERSION:
            raise VersionError(version, FORMAT_VERSION, "replay")
        pos += 16
        buf = cls(obs_dim, act_dim, capacity)
        for i in range(n_eps):
            (rows,) = struct.unpack("<I", _take(data, pos, 4, f"episode {i} length"))
            pos += 4
            arrays = []
            for width, what in ((obs_dim, "observations"), (act_dim, "actions"), (1, "rewards")):
                nbytes = rows * width * 4
                raw = _take(data, pos, nbytes, f"episode {i} {what}")
                arrays.append(np.frombuffer(raw, dtype="<f4").reshape(rows, width))
                pos += nbytes
            buf.episodes = buf.episodes + [Episode(arrays[0], arrays[1], arrays[2][:, 0])]
            buf.stored_steps += rows
        if pos != len(data):
            raise TruncatedFileError(
                f"{len(data) - pos} unexpected trailing bytes; length headers are inconsistent")
        return buf

    def persist(self, path) -> Path:
        path = Path(path)
        if path.is_dir() or str(path).endswith(os.sep):
            path = path / "replay.bin"
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path, capacity: int = DEFAULT_CAPACITY) -> "ReplayBuffer":
        path = Path(path)
        if path.is_dir():
            path = path / "replay.bin"
        return cls.from_bytes(path.read_bytes(), capacity)

    def equals(self, other: "ReplayBuffer") -> bool:
        return (self.obs_dim == other.obs_dim and self.action_dim == other.action_dim
                and len(self.episodes) == len(other.episodes)
                and all(a.equals(b) for a, b in zip(self.episodes, other.episodes)))


def _take(data: bytes, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(data):
        raise TruncatedFileError(
            f"file truncated while reading {what}: need {n} bytes at offset {pos}, "
            f"only {max(len(data) - pos, 0)} remain")
    return data[pos:pos + n]
