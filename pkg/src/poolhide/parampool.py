"""Shared parameter pool: fill, propagate/update, and decoding.

A pool keeps one flat array per parameter kind. A model is materialised from
the pool through a :class:`FillAssignment`: position ``i`` of the model's
canonical array of some kind reads pool index ``(v + i) mod |P|`` (passed
through a seeded permutation when the key asks for one). Several tasks write
their parameter deltas into per-task buffers; :func:`update` applies the mean.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng
from .nn import KINDS, Model, ParamKind, arch_spec

log = logging.getLogger(__name__)

FUSIONS = ("first", "first-nonzero", "median")


class PoolError(ValueError):
    pass


@dataclass
class ParamPool:
    groups: dict
    # kind -> {task_id: (unique pool indices, mean delta per index, weight)}
    buffers: dict = field(default_factory=dict)
    # kind -> bool mask of pool slots no carrier copy covered (decode only)
    uncovered: dict = field(default_factory=dict)

    def __post_init__(self):
        groups = {}
        for kind in KINDS:
            arr = self.groups.get(kind)
            groups[kind] = np.zeros(0) if arr is None else np.array(arr, dtype=np.float64)
            if groups[kind].ndim != 1:
                raise PoolError(f"{kind.value} group must be one-dimensional")
        if np.any(groups[ParamKind.SCALE] < 0):
            raise PoolError("scale group values must be non-negative")
        self.groups = groups
        for kind in KINDS:
            self.buffers.setdefault(kind, {})

    @property
    def sizes(self):
        return tuple(self.groups[k].size for k in KINDS)

    def copy(self):
        return ParamPool({k: v.copy() for k, v in self.groups.items()})

    def equals(self, other):
        return all(np.array_equal(self.groups[k], other.groups[k]) for k in KINDS)

    def pending_tasks(self):
        return sorted({t for kind in KINDS for t in self.buffers[kind]}, key=str)


@dataclass(frozen=True)
class SecretKey:
    v: int
    arch_id: str
    pool_sizes: tuple
    noise_seed: int = None
    permute: bool = False

    def __post_init__(self):
        if int(self.v) < 0:
            raise ValueError("secret offset v must be non-negative")
        sizes = tuple(int(s) for s in self.pool_sizes)
        if len(sizes) != 3 or any(s < 0 for s in sizes):
            raise ValueError(f"pool_sizes must be three non-negative integers, got {self.pool_sizes}")
        object.__setattr__(self, "v", int(self.v))
        object.__setattr__(self, "pool_sizes", sizes)
        object.__setattr__(self, "permute", bool(self.permute))

    @property
    def spec(self):
        return arch_spec(self.arch_id)

    def to_text(self):
        lines = [
            f"v={self.v}",
            f"arch={self.arch_id}",
            "pool_sizes=" + ",".join(str(s) for s in self.pool_sizes),
            f"permute={int(self.permute)}",
        ]
        if self.noise_seed is not None:
            lines.append(f"noise_seed={self.noise_seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed key line {line!r}")
            fields[name.strip()] = value.strip()
        known = {"v", "arch", "pool_sizes", "permute", "noise_seed"}
        extra = set(fields) - known
        if extra:
            raise ValueError(f"unknown key fields: {sorted(extra)}")
        try:
            return cls(
                v=int(fields["v"]),
                arch_id=fields["arch"],
                pool_sizes=tuple(int(s) for s in fields["pool_sizes"].split(",")),
                noise_seed=int(fields["noise_seed"]) if "noise_seed" in fields else None,
                permute=fields.get("permute", "0") in ("1", "true", "True"),
            )
        except KeyError as exc:
            raise ValueError(f"key is missing field {exc.args[0]!r}") from None


@lru_cache(maxsize=32)
def _pool_permutation(v, size):
    perm = rng.permutation(v, rng.PERMUTE, size)
    perm.flags.writeable = False
    return perm


def pool_permutation(v, size):
    """The seeded permutation of ``range(size)`` used when a key sets ``permute``."""
    return _pool_permutation(int(v), int(size))


@dataclass(frozen=True)
class FillAssignment:
    indices: dict  # kind -> int64 array, model position -> pool index


def derive_assignment(spec, key):
    counts = spec.counts()
    indices = {}
    for kind, size in zip(KINDS, key.pool_sizes):
        n = counts[kind]
        if n == 0:
            indices[kind] = np.zeros(0, dtype=np.int64)
            continue
        if size == 0:
            raise PoolError(
                f"{spec.arch_id} needs {n} {kind.value} parameters but that pool group is empty"
            )
        idx = (key.v + np.arange(n, dtype=np.int64)) % size
        if key.permute:
            idx = pool_permutation(key.v, size)[idx]
        indices[kind] = idx
    return FillAssignment(indices)


def _check_key(pool, key):
    if tuple(key.pool_sizes) != pool.sizes:
        raise PoolError(f"key pool sizes {key.pool_sizes} do not match pool sizes {pool.sizes}")


def fill(pool, spec, key, assignment=None):
    """Materialise a model whose every parameter is read from the pool."""
    _check_key(pool, key)
    if assignment is None:
        assignment = derive_assignment(spec, key)
    return Model(spec, {k: pool.groups[k][assignment.indices[k]] for k in KINDS})


def assemble(pool, key):
    """Rebuild the model named by ``key`` from a (decoded) pool."""
    return fill(pool, key.spec, key)


def init_from_model(carrier):
    return ParamPool({k: carrier.params[k].copy() for k in KINDS})


def init_from_scratch(sizes, seed, sigma0=0.05):
    n_w, n_b, n_s = (int(s) for s in sizes)
    if min(n_w, n_b, n_s) < 0:
        raise ValueError("pool sizes must be non-negative")
    return ParamPool({
        ParamKind.WEIGHT: sigma0 * rng.normal(seed, rng.POOL, n_w),
        ParamKind.BIAS: np.zeros(n_b),
        ParamKind.SCALE: np.ones(n_s),
    })


def propagate(pool, task_id, assignment, before, after, weight=1.0):
    """Buffer one task's parameter deltas, averaged over positions sharing a slot."""
    if before.spec != after.spec:
        raise PoolError("before/after models have different specs")
    for kind in KINDS:
        if task_id in pool.buffers[kind]:
            raise PoolError(f"task {task_id!r} already propagated into the {kind.value} buffer this round")
    for kind in KINDS:
        idx = assignment.indices[kind]
        if idx.size == 0:
            continue
        size = pool.groups[kind].size
        delta = after.params[kind] - before.params[kind]
        sums = np.bincount(idx, weights=delta, minlength=size)
        counts = np.bincount(idx, minlength=size)
        touched = np.flatnonzero(counts)
        pool.buffers[kind][task_id] = (touched, sums[touched] / counts[touched], float(weight))


def update(pool):
    """Apply the (weighted) mean of buffered task deltas and clear the buffers."""
    for kind in KINDS:
        buf = pool.buffers[kind]
        if not buf:
            continue
        size = pool.groups[kind].size
        total = np.zeros(size)
        wsum = np.zeros(size)
        # sorted for a schedule-independent summation order
        for task_id in sorted(buf, key=str):
            touched, deltas, w = buf[task_id]
            total[touched] += w * deltas
            wsum[touched] += w
        hit = wsum > 0
        pool.groups[kind][hit] += total[hit] / wsum[hit]
        buf.clear()
    np.maximum(pool.groups[ParamKind.SCALE], 0.0, out=pool.groups[ParamKind.SCALE])


def decode_direct(carrier):
    """Read the pool straight out of a carrier filled with ``v=0``, no permutation."""
    return init_from_model(carrier)


def _fuse(segments, covered, fusion):
    if fusion == "first":
        return segments[0].copy()
    if fusion == "first-nonzero":
        nonzero = (segments != 0) & covered
        first = np.argmax(nonzero, axis=0)
        out = segments[first, np.arange(segments.shape[1])]
        out[~nonzero.any(axis=0)] = 0.0
        return out
    if fusion == "median":
        masked = np.where(covered, segments, np.nan)
        out = np.zeros(segments.shape[1])
        any_cov = covered.any(axis=0)
        out[any_cov] = np.nanmedian(masked[:, any_cov], axis=0)
        return out
    raise ValueError(f"unknown fusion strategy {fusion!r}; choose from {FUSIONS}")


def decode_segmented(carrier, key, fusion="first-nonzero"):
    """Recover a pool from a carrier that holds one or more cyclic copies of it.

    Each kind's carrier array is cut into segments of the pool size (the last
    zero padded), the segments are fused elementwise, rotated right by
    ``v mod |P|`` and, if the key permutes, mapped through the inverse
    permutation. Pool slots that no real carrier entry covers are zero and
    flagged in ``pool.uncovered``.
    """
    if fusion not in FUSIONS:
        raise ValueError(f"unknown fusion strategy {fusion!r}; choose from {FUSIONS}")
    groups, uncovered = {}, {}
    for kind, size in zip(KINDS, key.pool_sizes):
        values = carrier.params[kind]
        n = values.size
        if size == 0:
            groups[kind] = np.zeros(0)
            continue
        if n < size:
            if fusion != "first":
                raise PoolError(
                    f"{kind.value}: pool size {size} exceeds the carrier's {n} parameters, "
                    f"so there is less than one copy to fuse with {fusion!r}"
                )
            log.warning("%s: carrier holds only %d of %d pool slots", kind.value, n, size)
        n_seg = -(-n // size)
        padded = np.zeros(n_seg * size)
        padded[:n] = values
        segments = padded.reshape(n_seg, size)
        covered = (np.arange(n_seg * size) < n).reshape(n_seg, size)
        fused = _fuse(segments, covered, fusion)
        hole = ~covered.any(axis=0)
        v = key.v % size
        fused = np.roll(fused, v)
        hole = np.roll(hole, v)
        if key.permute:
            perm = pool_permutation(key.v, size)
            out = np.empty(size)
            out[perm] = fused
            mask = np.empty(size, dtype=bool)
            mask[perm] = hole
            fused, hole = out, mask
        groups[kind] = fused
        if hole.any():
            uncovered[kind] = hole
    pool = ParamPool(groups)
    pool.uncovered = uncovered
    return pool


def decode(carrier, key, fusion="first-nonzero"):
    """Pick the decoding path by comparing the key's pool sizes with the carrier."""
    counts = carrier.spec.counts()
    direct = (
        tuple(counts[k] for k in KINDS) == tuple(key.pool_sizes)
        and key.v == 0 and not key.permute
    )
    return decode_direct(carrier) if direct else decode_segmented(carrier, key, fusion)
