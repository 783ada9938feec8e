"""Bit-level model of the file library, user caches, and outstanding demands.

Conventions used throughout the package:

* Files are indexed 0..N-1 and users 0..K-1.  Every file is F bits long,
  so the library is a flat address space of N*F "global bits"; global bit
  b belongs to file b // F at offset b % F.
* Cache and request matrices are (N*F, K) uint8 arrays: entry (b, i) == 1
  means user i holds (respectively still needs) global bit b.  Generators
  mark their output read-only; callers that need to mutate take a copy.
* Demands are a length-K tuple of file indices; in worst-case mode all
  demands are distinct, which is what the pruning step relies on.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProblemInstance:
    """Dimensions of one library/network: N files of F bits, K users with M-file caches."""

    num_files: int
    num_users: int
    file_bits: int
    cache_files: int

    def __post_init__(self):
        if self.num_files < 1:
            raise ValueError("num_files must be >= 1")
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.file_bits < 1:
            raise ValueError("file_bits must be >= 1")
        if not 0 <= self.cache_files <= self.num_files:
            raise ValueError("cache_files must lie in [0, num_files]")

    @property
    def library_bits(self) -> int:
        return self.num_files * self.file_bits

    @property
    def cache_bits(self) -> int:
        """Per-user cache capacity in bits."""
        return self.cache_files * self.file_bits

    def bit_index(self, file_index: int, offset: int) -> int:
        if not 0 <= file_index < self.num_files:
            raise ValueError(f"file_index {file_index} out of range")
        if not 0 <= offset < self.file_bits:
            raise ValueError(f"offset {offset} out of range")
        return file_index * self.file_bits + offset

    def file_of(self, bit: int) -> int:
        return bit // self.file_bits

    def offset_of(self, bit: int) -> int:
        return bit % self.file_bits

    def file_slice(self, file_index: int) -> slice:
        """Row range of one file's bits in a (N*F, K) matrix."""
        start = file_index * self.file_bits
        return slice(start, start + self.file_bits)


@dataclass(frozen=True)
class PrunedProblem:
    """A problem restricted to the requested files (num_files == num_users)."""

    instance: ProblemInstance
    cache: np.ndarray
    demands: tuple
    file_map: dict  # old file index -> new file index


def _check_demands(instance, demands, distinct=True):
    demands = tuple(int(d) for d in demands)
    if len(demands) != instance.num_users:
        raise ValueError(
            f"expected {instance.num_users} demands, got {len(demands)}"
        )
    for d in demands:
        if not 0 <= d < instance.num_files:
            raise ValueError(f"demand {d} out of range [0, {instance.num_files})")
    if distinct and len(set(demands)) != len(demands):
        raise ValueError("demands must be distinct (worst-case mode)")
    return demands


def _check_matrix(instance, matrix, name):
    matrix = np.asarray(matrix)
    expected = (instance.library_bits, instance.num_users)
    if matrix.shape != expected:
        raise ValueError(f"{name} has shape {matrix.shape}, expected {expected}")
    return matrix


def random_prefetch(instance: ProblemInstance, rng) -> np.ndarray:
    """Each user caches an independent uniform MF-subset of the N*F library bits."""
    cache = np.zeros((instance.library_bits, instance.num_users), dtype=np.uint8)
    for i in range(instance.num_users):
        picks = rng.choice(instance.library_bits, size=instance.cache_bits, replace=False)
        cache[picks, i] = 1
    cache.setflags(write=False)
    return cache


def segment_prefetch(instance: ProblemInstance) -> np.ndarray:
    """Deterministic placement that forces coding opportunities.

    Every file is split into K equal segments and user i caches segments
    i, i+1, ..., i+M-1 (cyclically) of every file.  Supported only for
    num_files == num_users with file_bits divisible by num_users; used as
    a fixture where the optimal schedule is known by construction.
    """
    n, k, f, m = instance.num_files, instance.num_users, instance.file_bits, instance.cache_files
    if n != k:
        raise ValueError(f"segment_prefetch requires num_files == num_users, got {n} != {k}")
    if f % k != 0:
        raise ValueError(f"segment_prefetch requires file_bits divisible by num_users ({f} % {k} != 0)")
    seg = f // k
    cache = np.zeros((instance.library_bits, k), dtype=np.uint8)
    for i in range(k):
        for s in range(m):
            segment = (i + s) % k
            for file_index in range(n):
                start = file_index * f + segment * seg
                cache[start:start + seg, i] = 1
    cache.setflags(write=False)
    return cache


def outstanding_bits(instance: ProblemInstance, cache, demands) -> np.ndarray:
    """Request matrix at the start of delivery: bits of each demanded file not cached locally."""
    cache = _check_matrix(instance, cache, "cache")
    demands = _check_demands(instance, demands, distinct=False)
    requests = np.zeros_like(cache)
    for i, d in enumerate(demands):
        rows = instance.file_slice(d)
        requests[rows, i] = 1 - cache[rows, i]
    requests.setflags(write=False)
    return requests


def decode(packet, knowledge, outstanding):
    """Single-user decode of one XOR packet.

    The user cancels every packet member it already knows; if exactly one
    unknown bit remains and that bit is outstanding, it is recovered.
    Returns the recovered global bit index, or None.
    """
    packet = set(packet)
    if not packet:
        raise ValueError("packet must be non-empty")
    unknown = packet - set(knowledge)
    if len(unknown) != 1:
        return None
    bit = unknown.pop()
    return bit if bit in outstanding else None


def prune_to_requested(instance: ProblemInstance, cache, demands) -> PrunedProblem:
    """Drop the files nobody requested, leaving an instance with num_files == num_users.

    Demands must be distinct.  Requested files are renumbered in ascending
    order of their old index; cache rows are re-sliced to match.  The
    pruned instance's cache_files is clamped to the new library size so
    its capacity invariant still holds.
    """
    demands = _check_demands(instance, demands, distinct=True)
    cache = _check_matrix(instance, cache, "cache")
    requested = sorted(set(demands))
    file_map = {old: new for new, old in enumerate(requested)}
    rows = np.concatenate([
        np.arange(instance.file_slice(old).start, instance.file_slice(old).stop)
        for old in requested
    ])
    new_instance = ProblemInstance(
        num_files=len(requested),
        num_users=instance.num_users,
        file_bits=instance.file_bits,
        cache_files=min(instance.cache_files, len(requested)),
    )
    new_cache = np.ascontiguousarray(cache[rows, :])
    new_cache.setflags(write=False)
    new_demands = tuple(file_map[d] for d in demands)
    return PrunedProblem(new_instance, new_cache, new_demands, file_map)


def random_instance(num_files, num_users, file_bits, cache_files, rng):
    """Sample one worst-case delivery instance, already pruned to num_files == num_users.

    Demands are a uniform distinct K-subset of the N files (in random user
    order), caches are random_prefetch draws.  Returns (instance, cache,
    demands) ready for the delivery environment.
    """
    instance = ProblemInstance(num_files, num_users, file_bits, cache_files)
    demands = tuple(int(d) for d in rng.choice(num_files, size=num_users, replace=False))
    cache = random_prefetch(instance, rng)
    pruned = prune_to_requested(instance, cache, demands)
    return pruned.instance, pruned.cache, pruned.demands
