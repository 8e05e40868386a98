"""Column-generation training: solve on a small secant subset, then
alternate streaming scans for violated pairs with warm-started re-solves
until a full scan comes back clean.

Memory never scales with the pair count: scans walk a seeded pseudo-random
permutation of the pair stream in fixed-size chunks, and only the active
set plus at most one violator batch per generation is ever resident.
Violation and activity are judged on quantized codes, since the termination
guarantee concerns the real near-isometry condition.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .admm import SolverConfig, train_nibh
from .core import (
    BinaryCodes,
    Dataset,
    HashModel,
    SecantBatch,
    decode_pair_indices,
    hamming_pairs,
    hash_codes,
    pair_distances,
    sample_pair_indices,
    secant_count,
)

__all__ = [
    "ActiveSet",
    "CgConfig",
    "CgReport",
    "sample_initial_secants",
    "identify_active",
    "scan_violators",
    "train_nibh_cg",
]

SCAN_CHUNK = 1 << 18


@dataclass
class ActiveSet:
    """Secants currently kept resident, with the provenance of each
    (initial sample, carried-over active constraint, or found violator)."""

    secants: SecantBatch
    origin: np.ndarray  # per-secant tag: initial | active-carryover | violator
    generation: int

    def __post_init__(self):
        if len(self.origin) != len(self.secants):
            raise ValueError("origin tags must align with secants")
        keys = self.secants.keys()
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate pair in active set")

    def __len__(self):
        return len(self.secants)


@dataclass
class CgConfig:
    init_sample_size: int = 5000  # clamped to the pair count
    violator_batch: int = 2000
    active_tol: float = 0.02  # fraction of delta_hat
    scan_seed: int = 0
    max_generations: int = 20
    active_cap: int = 200_000
    inner: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.init_sample_size < 1 or self.violator_batch < 1:
            raise ValueError("init_sample_size and violator_batch must be >= 1")
        if not (0 <= self.active_tol < 1):
            raise ValueError("active_tol must lie in [0, 1)")
        if self.max_generations < 1 or self.active_cap < 1:
            raise ValueError("max_generations and active_cap must be >= 1")


@dataclass
class CgReport:
    generations: int
    active_size: int
    peak_resident_secants: int
    fully_satisfied: bool
    delta_hat: float
    lam: float
    violators_found: int
    init_size: int
    history: list  # per generation: dict(generation, active_size, violators, delta_hat)


# ---------------------------------------------------------------------------
# pieces


def sample_initial_secants(q: int, data: Dataset, config: CgConfig) -> ActiveSet:
    """Uniform sample (without replacement) from the pair stream with true
    distances filled in; the whole stream when the request covers it."""
    total = secant_count(q)
    rng = np.random.default_rng(config.scan_seed)
    t = sample_pair_indices(total, config.init_sample_size, rng)
    i_idx, j_idx = decode_pair_indices(t)
    batch = SecantBatch(i_idx, j_idx, pair_distances(data.points, i_idx, j_idx))
    return ActiveSet(batch, np.full(len(batch), "initial", dtype="<U16"), 0)


def identify_active(codes: BinaryCodes, lam: float, secants: SecantBatch,
                    delta_hat: float, active_tol: float,
                    cap: Optional[int] = None) -> np.ndarray:
    """Mask of secants whose quantized residual reaches
    (1 - active_tol) * delta_hat; at most ``cap`` survive (largest first)."""
    resid = np.abs(lam * hamming_pairs(codes, secants.i, secants.j) - secants.c)
    mask = resid >= (1.0 - active_tol) * delta_hat
    if cap is not None and int(mask.sum()) > cap:
        # keep the largest residuals; ties resolved by pair order
        idx = np.nonzero(mask)[0]
        order = np.lexsort((idx, -resid[idx]))
        keep = idx[order[:cap]]
        mask = np.zeros(len(secants), dtype=bool)
        mask[keep] = True
    return mask


def _scan_positions(total: int, seed: int):
    """Affine full-cycle walk of [0, total): position(t) = (off + t*step) mod
    total with step coprime to total. Pseudo-random order, O(1) state, each
    pair visited exactly once."""
    rng = np.random.default_rng(seed)
    step = int(rng.integers(1, total))
    while math.gcd(step, total) != 1:
        step += 1
        if step >= total:
            step = 1
    off = int(rng.integers(0, total))
    return off, step


def _scan_range(codes, points, lam, delta_hat, total, off, step, lo, hi,
                batch_limit):
    """Scan stream positions [lo, hi), returning up to batch_limit violators
    as (position, linear_index) pairs in stream order."""
    found_pos = []
    found_t = []
    for start in range(lo, hi, SCAN_CHUNK):
        stop = min(start + SCAN_CHUNK, hi)
        pos = np.arange(start, stop, dtype=np.int64)
        t = (off + pos * step) % total
        i_idx, j_idx = decode_pair_indices(t)
        resid = np.abs(lam * hamming_pairs(codes, i_idx, j_idx)
                       - pair_distances(points, i_idx, j_idx))
        hit = np.nonzero(resid > delta_hat)[0]
        if hit.size:
            found_pos.append(pos[hit])
            found_t.append(t[hit])
            if sum(a.size for a in found_pos) >= batch_limit:
                break
    if not found_pos:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(found_pos), np.concatenate(found_t)


def scan_violators(codes: BinaryCodes, data: Dataset, lam: float,
                   delta_hat: float, batch_limit: int, seed: int,
                   n_threads: int = 1) -> tuple[SecantBatch, bool]:
    """Stream every pair in seeded pseudo-random order, collecting secants
    whose quantized residual exceeds delta_hat, until batch_limit are found
    or the stream is exhausted.

    Returns (violators, scanned_all); scanned_all is True exactly when the
    stream was exhausted finding nothing. Memory is O(batch_limit + chunk);
    partitioned scanning with several threads returns the identical result.
    """
    if delta_hat < 0:
        raise ValueError("delta_hat must be nonnegative")
    total = secant_count(data.q)
    off, step = _scan_positions(total, seed)

    if n_threads <= 1:
        pos, t = _scan_range(codes, data.points, lam, delta_hat, total, off,
                             step, 0, total, batch_limit)
    else:
        bounds = np.linspace(0, total, n_threads + 1, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(
                lambda se: _scan_range(codes, data.points, lam, delta_hat,
                                       total, off, step, int(se[0]),
                                       int(se[1]), batch_limit),
                zip(bounds[:-1], bounds[1:]),
            ))
        pos = np.concatenate([p for p, _ in parts])
        t = np.concatenate([x for _, x in parts])
        order = np.argsort(pos, kind="stable")
        pos, t = pos[order], t[order]

    if pos.size > batch_limit:
        pos, t = pos[:batch_limit], t[:batch_limit]
    i_idx, j_idx = decode_pair_indices(t)
    violators = SecantBatch(i_idx, j_idx, pair_distances(data.points, i_idx, j_idx))
    scanned_all = pos.size == 0
    return violators, scanned_all


def _union(active: SecantBatch, active_origin, violators: SecantBatch) -> ActiveSet:
    """Merge, dropping violators already present; a pair enters at most once."""
    keys_a = active.keys()
    keys_v = violators.keys()
    fresh = ~np.isin(keys_v, keys_a)
    i = np.concatenate([active.i, violators.i[fresh]])
    j = np.concatenate([active.j, violators.j[fresh]])
    c = np.concatenate([active.c, violators.c[fresh]])
    origin = np.concatenate([
        active_origin,
        np.full(int(fresh.sum()), "violator", dtype="<U16"),
    ])
    return ActiveSet(SecantBatch(i, j, c), origin, 0)


# ---------------------------------------------------------------------------
# driver


def _emit(progress, record):
    if progress is None:
        return
    if hasattr(progress, "write"):
        progress.write(json.dumps(record) + "\n")
    else:
        progress(record)


def train_nibh_cg(
    data: Dataset,
    m: int,
    config: Optional[CgConfig] = None,
    *,
    w0: Optional[np.ndarray] = None,
    progress: Optional[Callable] = None,
    n_threads: int = 1,
) -> tuple[HashModel, CgReport]:
    """Column-generation training over the full pair universe.

    Solves on an initial random subset, freezes the scale from that solve,
    then repeatedly augments the active set with scanned violators and
    re-solves warm-started from the previous embedding (u, y restart at zero
    because the secant index set changed). Terminates when a full scan finds
    no violator or max_generations is exhausted; the report says which.
    """
    if config is None:
        config = CgConfig()

    active_set = sample_initial_secants(data.q, data, config)
    init_size = len(active_set)
    peak = init_size

    model, _state = train_nibh(data, active_set.secants, m, config.inner, w0=w0)
    lam_hat = model.lam  # frozen for the rest of the run

    codes = hash_codes(model, data)
    resid = np.abs(lam_hat * hamming_pairs(codes, active_set.secants.i,
                                           active_set.secants.j)
                   - active_set.secants.c)
    delta_hat = float(resid.max())

    mask = identify_active(codes, lam_hat, active_set.secants, delta_hat,
                           config.active_tol, config.active_cap)
    active = active_set.secants.subset(mask)
    active_origin = np.full(len(active), "active-carryover", dtype="<U16")

    history = []
    violators_total = 0
    fully_satisfied = False
    gen = 0
    for gen in range(1, config.max_generations + 1):
        violators, scanned_all = scan_violators(
            codes, data, lam_hat, delta_hat, config.violator_batch,
            seed=config.scan_seed + gen, n_threads=n_threads,
        )
        record = {
            "generation": gen,
            "active_size": len(active),
            "violators_found": len(violators),
            "delta_hat": delta_hat,
        }
        history.append(record)
        _emit(progress, record)
        if len(violators) == 0:
            fully_satisfied = scanned_all
            gen -= 1  # this generation ran no solve
            break
        violators_total += len(violators)

        merged = _union(active, active_origin, violators)
        merged.generation = gen
        # memory contract: what is resident never beats the sampled start
        # plus one batch per generation
        assert len(merged) <= init_size + gen * config.violator_batch, \
            "resident secants exceed the column-generation memory contract"
        peak = max(peak, len(merged))

        model, _state = train_nibh(data, merged.secants, m, config.inner,
                                   w0=model.w, fixed_lambda=lam_hat)
        codes = hash_codes(model, data)
        resid = np.abs(lam_hat * hamming_pairs(codes, merged.secants.i,
                                               merged.secants.j)
                       - merged.secants.c)
        delta_hat = float(resid.max())
        mask = identify_active(codes, lam_hat, merged.secants, delta_hat,
                               config.active_tol, config.active_cap)
        active = merged.secants.subset(mask)
        active_origin = merged.origin[mask].copy()
        active_origin[:] = "active-carryover"

    report = CgReport(
        generations=gen,
        active_size=len(active),
        peak_resident_secants=peak,
        fully_satisfied=fully_satisfied,
        delta_hat=delta_hat,
        lam=lam_hat,
        violators_found=violators_total,
        init_size=init_size,
        history=history,
    )
    return model, report
