"""Transitions, replay buffers and their on-disk formats.

A buffer is an ordered, immutable collection of ``Transition`` records plus
the dimensional metadata needed to interpret them. Buffers are never
validated on construction: invariant violations are reported as data by
:func:`validate`.

Binary layout (little-endian)::

    b"DVRB" | u8 version=1 | u32 m | u8 action kind (0 discrete, 1 continuous)
    | u32 n_actions or n | u64 count | u32 tag length | tag (utf-8)
    | count x (m f64 state, u32 action or n f64, m f64 next_state,
               f64 reward, u8 terminal)
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"DVRB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBIBIQI")

DISCRETE = "discrete"
CONTINUOUS = "continuous"


class BufferFormatError(ValueError):
    """Raised when a buffer file cannot be decoded."""


@dataclass(frozen=True)
class ActionSpec:
    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in (DISCRETE, CONTINUOUS):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("action size must be >= 1")

    @classmethod
    def discrete(cls, n_actions: int) -> "ActionSpec":
        return cls(DISCRETE, n_actions)

    @classmethod
    def continuous(cls, n: int) -> "ActionSpec":
        return cls(CONTINUOUS, n)

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def feature_width(self) -> int:
        """Columns the action occupies in a feature row."""
        return 1 if self.is_discrete else self.size


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Transition:
    """One experience tuple ``(x, u, x', r, e)``."""

    state: np.ndarray
    action: int | np.ndarray
    next_state: np.ndarray
    reward: float
    terminal: bool

    def __post_init__(self):
        object.__setattr__(self, "state", _frozen(self.state))
        object.__setattr__(self, "next_state", _frozen(self.next_state))
        if isinstance(self.action, (int, np.integer)):
            object.__setattr__(self, "action", int(self.action))
        else:
            object.__setattr__(self, "action", _frozen(self.action))
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "terminal", bool(self.terminal))

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        if isinstance(self.action, int) != isinstance(other.action, int):
            return False
        if isinstance(self.action, int):
            same_action = self.action == other.action
        else:
            same_action = _bits_equal(self.action, other.action)
        return (
            same_action
            and _bits_equal(self.state, other.state)
            and _bits_equal(self.next_state, other.next_state)
            and _bits_equal(np.float64(self.reward), np.float64(other.reward))
            and self.terminal == other.terminal
        )

    __hash__ = None


def _bits_equal(a, b) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class BufferArrays:
    """Column-stacked view of a dimensionally consistent buffer."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.rewards)


@dataclass(frozen=True, eq=False)
class ReplayBuffer:
    transitions: tuple[Transition, ...]
    state_dim: int
    action_spec: ActionSpec
    domain_tag: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))

    @classmethod
    def from_arrays(
        cls,
        states,
        actions,
        next_states,
        rewards,
        terminals,
        action_spec: ActionSpec,
        domain_tag: str = "",
    ) -> "ReplayBuffer":
        states = np.asarray(states, dtype=np.float64)
        next_states = np.asarray(next_states, dtype=np.float64)
        if states.ndim != 2 or states.shape != next_states.shape:
            raise ValueError("states and next_states must be matching 2-D arrays")
        n, m = states.shape
        rewards = np.asarray(rewards, dtype=np.float64).reshape(n)
        terminals = np.asarray(terminals).astype(bool).reshape(n)
        if action_spec.is_discrete:
            actions = np.asarray(actions).astype(np.int64).reshape(n)
            acts = [int(a) for a in actions]
        else:
            actions = np.asarray(actions, dtype=np.float64).reshape(n, action_spec.size)
            acts = list(actions)
        transitions = tuple(
            Transition(states[i], acts[i], next_states[i], rewards[i], terminals[i])
            for i in range(n)
        )
        buf = cls(transitions, m, action_spec, domain_tag)
        arrays = BufferArrays(
            *(_readonly(a.copy()) for a in (states, actions, next_states, rewards, terminals))
        )
        buf._cache["arrays"] = arrays
        return buf

    @classmethod
    def empty(cls, state_dim: int, action_spec: ActionSpec, domain_tag: str = ""):
        return cls((), state_dim, action_spec, domain_tag)

    def __len__(self):
        return len(self.transitions)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def __getitem__(self, i) -> Transition:
        return self.transitions[i]

    def __eq__(self, other):
        if not isinstance(other, ReplayBuffer):
            return NotImplemented
        return (
            self.state_dim == other.state_dim
            and self.action_spec == other.action_spec
            and self.domain_tag == other.domain_tag
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.transitions, other.transitions))
        )

    __hash__ = None

    @property
    def arrays(self) -> BufferArrays:
        """Stacked columns; raises ``ValueError`` for an inconsistent buffer."""
        if "arrays" not in self._cache:
            self._cache["arrays"] = self._stack()
        return self._cache["arrays"]

    def _stack(self) -> BufferArrays:
        m = self.state_dim
        n = len(self)
        states = np.empty((n, m))
        next_states = np.empty((n, m))
        if self.action_spec.is_discrete:
            actions = np.empty(n, dtype=np.int64)
        else:
            actions = np.empty((n, self.action_spec.size))
        rewards = np.empty(n)
        terminals = np.empty(n, dtype=bool)
        for i, t in enumerate(self.transitions):
            if t.state.shape != (m,) or t.next_state.shape != (m,):
                raise ValueError(f"transition {i} does not match state_dim={m}")
            if self.action_spec.is_discrete != isinstance(t.action, int):
                raise ValueError(f"transition {i} does not match the action spec")
            states[i] = t.state
            next_states[i] = t.next_state
            actions[i] = t.action
            rewards[i] = t.reward
            terminals[i] = t.terminal
        return BufferArrays(*(_readonly(a) for a in (states, actions, next_states, rewards, terminals)))

    def subset(self, indices, domain_tag: str | None = None) -> "ReplayBuffer":
        """Buffer of the transitions at ``indices``, in the given order."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        tag = self.domain_tag if domain_tag is None else domain_tag
        out = ReplayBuffer(
            tuple(self.transitions[i] for i in idx), self.state_dim, self.action_spec, tag
        )
        if "arrays" in self._cache:
            a = self._cache["arrays"]
            out._cache["arrays"] = BufferArrays(
                *(_readonly(col[idx]) for col in (a.states, a.actions, a.next_states, a.rewards, a.terminals))
            )
        return out

    def with_tag(self, domain_tag: str) -> "ReplayBuffer":
        return self.subset(np.arange(len(self)), domain_tag=domain_tag)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# operations


def validate(buffer: ReplayBuffer) -> list[tuple[int, str]]:
    """Check every transition against the buffer's invariants.

    Returns an empty list when the buffer is valid, otherwise
    ``(index, violation)`` pairs in index order.
    """
    errors = []
    m = buffer.state_dim
    spec = buffer.action_spec
    if m < 1:
        errors.append((-1, "non-positive-state-dim"))
    for i, t in enumerate(buffer.transitions):
        if t.state.shape != (m,) or t.next_state.shape != (m,):
            errors.append((i, "state-dim-mismatch"))
        elif not (np.all(np.isfinite(t.state)) and np.all(np.isfinite(t.next_state))):
            errors.append((i, "non-finite-state"))
        if spec.is_discrete:
            if not isinstance(t.action, int):
                errors.append((i, "action-kind-mismatch"))
            elif not 0 <= t.action < spec.size:
                errors.append((i, "action-out-of-range"))
        else:
            if isinstance(t.action, int):
                errors.append((i, "action-kind-mismatch"))
            elif t.action.shape != (spec.size,):
                errors.append((i, "action-dim-mismatch"))
            elif not np.all(np.isfinite(t.action)):
                errors.append((i, "non-finite-action"))
        if not math.isfinite(t.reward):
            errors.append((i, "non-finite-reward"))
    return errors


def batch_slices(n: int, batch_size: int) -> list[slice]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def split_batches(buffer: ReplayBuffer, batch_size: int) -> list[ReplayBuffer]:
    """Consecutive, non-overlapping batches in buffer order; the last may be short."""
    return [
        buffer.subset(np.arange(s.start, s.stop)) for s in batch_slices(len(buffer), batch_size)
    ]


def sample_indices(n: int, k: int, rng_seed: int) -> np.ndarray:
    if n == 0:
        raise ValueError("cannot sample from an empty buffer")
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.random.default_rng(rng_seed).integers(0, n, size=k)


def sample_batch(buffer: ReplayBuffer, k: int, rng_seed: int) -> ReplayBuffer:
    """Uniform minibatch of ``k`` transitions drawn with replacement."""
    return buffer.subset(sample_indices(len(buffer), k, rng_seed))


# --------------------------------------------------------------------------
# persistence


def _record_dtype(m: int, spec: ActionSpec) -> np.dtype:
    action = ("action", "<u4") if spec.is_discrete else ("action", "<f8", (spec.size,))
    return np.dtype(
        [
            ("state", "<f8", (m,)),
            action,
            ("next_state", "<f8", (m,)),
            ("reward", "<f8"),
            ("terminal", "u1"),
        ]
    )


def to_bytes(buffer: ReplayBuffer) -> bytes:
    spec = buffer.action_spec
    m = buffer.state_dim
    tag = buffer.domain_tag.encode("utf-8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, m, 0 if spec.is_discrete else 1, spec.size, len(buffer), len(tag))
    records = np.zeros(len(buffer), dtype=_record_dtype(m, spec))
    if len(buffer):
        a = buffer.arrays
        records["state"] = a.states
        records["action"] = a.actions
        records["next_state"] = a.next_states
        records["reward"] = a.rewards
        records["terminal"] = a.terminals
    return header + tag + records.tobytes()


def from_bytes(data: bytes) -> ReplayBuffer:
    if len(data) < _HEADER.size:
        raise BufferFormatError("truncated header")
    magic, version, m, kind, size, count, tag_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BufferFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BufferFormatError(f"unsupported format version {version}")
    if m < 1 or size < 1 or kind not in (0, 1):
        raise BufferFormatError("inconsistent dimensions in header")
    spec = ActionSpec(DISCRETE if kind == 0 else CONTINUOUS, size)
    offset = _HEADER.size
    if len(data) < offset + tag_len:
        raise BufferFormatError("truncated domain tag")
    try:
        tag = data[offset : offset + tag_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BufferFormatError("domain tag is not utf-8") from exc
    offset += tag_len
    dtype = _record_dtype(m, spec)
    expected = count * dtype.itemsize
    if len(data) - offset != expected:
        raise BufferFormatError(
            f"payload holds {len(data) - offset} bytes, header promises {expected}"
        )
    if count == 0:
        return ReplayBuffer.empty(m, spec, tag)
    records = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    if np.any(records["terminal"] > 1):
        raise BufferFormatError("terminal flag must be 0 or 1")
    return ReplayBuffer.from_arrays(
        records["state"],
        records["action"],
        records["next_state"],
        records["reward"],
        records["terminal"],
        spec,
        tag,
    )


def save(buffer: ReplayBuffer, path) -> None:
    Path(path).write_bytes(to_bytes(buffer))


def load(path) -> ReplayBuffer:
    return from_bytes(Path(path).read_bytes())


def csv_header(state_dim: int, action_spec: ActionSpec) -> list[str]:
    xs = [f"x{i}" for i in range(state_dim)]
    us = ["u"] if action_spec.is_discrete else [f"u{i}" for i in range(action_spec.size)]
    xps = [f"xp{i}" for i in range(state_dim)]
    return xs + us + xps + ["r", "e"]


def export_csv(buffer: ReplayBuffer, path) -> None:
    """Write one row per transition; floats use ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(buffer.state_dim, buffer.action_spec))
        for t in buffer:
            action = [t.action] if isinstance(t.action, int) else [repr(float(v)) for v in t.action]
            writer.writerow(
                [repr(float(v)) for v in t.state]
                + action
                + [repr(float(v)) for v in t.next_state]
                + [repr(t.reward), int(t.terminal)]
            )


def import_csv(path, action_spec: ActionSpec, domain_tag: str = "") -> ReplayBuffer:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m = sum(1 for h in header if h.startswith("x") and not h.startswith("xp"))
        if header != csv_header(m, action_spec):
            raise BufferFormatError(f"unexpected CSV header {header}")
        rows: Sequence[list[str]] = list(reader)
    a = action_spec.feature_width
    if not rows:
        return ReplayBuffer.empty(m, action_spec, domain_tag)
    table = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    actions = table[:, m : m + a]
    return ReplayBuffer.from_arrays(
        table[:, :m],
        actions[:, 0] if action_spec.is_discrete else actions,
        table[:, m + a : 2 * m + a],
        table[:, 2 * m + a],
        table[:, 2 * m + a + 1],
        action_spec,
        domain_tag,
    )
