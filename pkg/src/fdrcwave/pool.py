"""Training pool: a fixed population of evolving domains.

The surrogate's own predictions are written back as future training inputs;
entries occasionally reset to a fresh random domain so the net keeps seeing
early propagation stages.  The whole pool is memory-resident.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DomainSpec, SigmaField, SourceSpec, WaveState, build_sigma, new_domain


@dataclass
class PoolEntry:
    state: WaveState
    sources: list[SourceSpec]
    sigma: SigmaField
    age: int = 0


@dataclass
class TrainingPool:
    entries: list[PoolEntry]
    reset_prob: float
    rng: np.random.Generator
    spec: DomainSpec
    dtype: np.dtype
    domain_kwargs: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


def init_pool(
    n: int,
    spec: DomainSpec,
    reset_prob: float,
    rng: np.random.Generator,
    dtype=np.float32,
    **domain_kwargs,
) -> TrainingPool:
    """n fresh zero-field domains with random sources drawn from rng."""
    if n < 1:
        raise ValueError("pool needs at least one entry")
    if not 0.0 <= reset_prob <= 1.0:
        raise ValueError(f"reset_prob must lie in [0, 1], got {reset_prob}")
    sigma = build_sigma(spec).astype(dtype)
    entries = []
    for _ in range(n):
        state, sources = new_domain(spec, rng, dtype=dtype, **domain_kwargs)
        entries.append(PoolEntry(state, sources, sigma))
    return TrainingPool(entries, reset_prob, rng, spec, np.dtype(dtype), dict(domain_kwargs))


def sample_batch(pool: TrainingPool, k: int):
    """k distinct entry indices, uniformly without replacement, plus views."""
    n = len(pool)
    if not 1 <= k <= n:
        raise ValueError(f"batch size {k} outside 1..{n}")
    idx = pool.rng.choice(n, size=k, replace=False)
    return idx, [pool.entries[i] for i in idx]


def write_back(pool: TrainingPool, indices, new_states) -> TrainingPool:
    """Store predicted next states; independently reset each touched entry
    with probability reset_prob (fresh sources, zero fields, age 0)."""
    indices = list(indices)
    new_states = list(new_states)
    if len(indices) != len(new_states):
        raise ValueError("indices and new_states differ in length")
    for i, st in zip(indices, new_states):
        i = int(i)
        if not 0 <= i < len(pool.entries):
            raise IndexError(f"pool index {i} out of range 0..{len(pool.entries) - 1}")
        old = pool.entries[i]
        if pool.rng.random() < pool.reset_prob:
            state, sources = new_domain(
                pool.spec, pool.rng, dtype=pool.dtype, **pool.domain_kwargs
            )
            pool.entries[i] = PoolEntry(state, sources, old.sigma, age=0)
        else:
            pool.entries[i] = PoolEntry(st, old.sources, old.sigma, age=old.age + 1)
    return pool
