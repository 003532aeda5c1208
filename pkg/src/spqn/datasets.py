"""Synthetic path images, dataset files and the enumeration oracle."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import STAR, Network, format_evidence
from .params import ParamVector

MAX_ORACLE_VARS = 20
HEADER = "SPQN-DATA 1 N={n}"

# heading as (drow, dcol): up, right, down, left -- turning right is +1
_HEADINGS = ((-1, 0), (0, 1), (1, 0), (0, -1))


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# path images -----------------------------------------------------------------

def _walk(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    grid = np.zeros((height, width), dtype=np.int8)
    pos = (int(rng.integers(height)), int(rng.integers(width)))
    grid[pos] = 1

    def legal(cell, current):
        r, c = cell
        if not (0 <= r < height and 0 <= c < width) or grid[r, c]:
            return False
        for dr, dc in _HEADINGS:
            nb = (r + dr, c + dc)
            if nb != current and 0 <= nb[0] < height and 0 <= nb[1] < width and grid[nb]:
                return False
        return True

    def step(p, h):
        return (p[0] + _HEADINGS[h][0], p[1] + _HEADINGS[h][1])

    heading = int(rng.integers(4))
    if not legal(step(pos, heading), pos):
        options = [h for h in range(4) if legal(step(pos, h), pos)]
        if not options:
            return grid
        heading = options[int(rng.integers(len(options)))]
    while True:
        pos = step(pos, heading)
        grid[pos] = 1
        options = [h for h in (heading, (heading + 3) % 4, (heading + 1) % 4) if legal(step(pos, h), pos)]
        if not options:
            return grid
        heading = options[int(rng.integers(len(options)))]


def generate_path_dataset(width: int, height: int, count: int, seed: int) -> np.ndarray:
    """``count`` path images, shape (count, height, width).

    Each image is a self-avoiding walk from a uniform start cell: at every
    step it continues forward, left or right, uniformly among the moves that
    land on a free cell not 4-adjacent to the path drawn so far (other than
    the current cell).  The walk ends when no such move exists.  Sample ``k``
    uses its own generator seeded with ``(seed, k)``.
    """
    if width < 2 or height < 2:
        raise ValueError("width and height must be at least 2")
    out = np.empty((count, height, width), dtype=np.int8)
    for k in range(count):
        out[k] = _walk(width, height, np.random.default_rng([seed, k]))
    return out


def is_simple_path(image: np.ndarray) -> bool:
    """Whether the on-pixels form one 4-connected simple path."""
    on = np.argwhere(np.asarray(image) == 1)
    if len(on) == 0:
        return False
    cells = {tuple(p) for p in on}
    degree = {}
    for r, c in cells:
        degree[(r, c)] = sum((r + dr, c + dc) in cells for dr, dc in _HEADINGS)
    if any(d > 2 for d in degree.values()):
        return False
    ends = sum(d == 1 for d in degree.values())
    if len(cells) == 1:
        return True
    if ends != 2:
        return False
    start = next(iter(cells))
    seen, stack = {start}, [start]
    while stack:
        r, c = stack.pop()
        for dr, dc in _HEADINGS:
            nb = (r + dr, c + dc)
            if nb in cells and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(cells)


def flatten_images(images: np.ndarray) -> np.ndarray:
    """Row-major flattening to evidence rows."""
    images = np.asarray(images, dtype=np.int8)
    return images.reshape(images.shape[0], -1)


# dataset files ---------------------------------------------------------------

def write_dataset(path, samples) -> None:
    x = np.asarray(samples, dtype=np.int8)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    lines = [HEADER.format(n=x.shape[1])]
    lines += [format_evidence(row) for row in x]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> np.ndarray:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("missing header", 1)
    head = lines[0].split()
    if len(head) != 3 or head[0] != "SPQN-DATA" or head[1] != "1" or not head[2].startswith("N="):
        raise DatasetFormatError(f"bad header {lines[0]!r}", 1)
    try:
        n = int(head[2][2:])
    except ValueError:
        raise DatasetFormatError(f"bad header {lines[0]!r}", 1) from None
    out = np.empty((len(lines) - 1, n), dtype=np.int8)
    table = {"0": 0, "1": 1, "*": STAR}
    for i, line in enumerate(lines[1:], start=2):
        if len(line) != n:
            raise DatasetFormatError(f"expected {n} characters, found {len(line)}", i)
        try:
            out[i - 2] = [table[ch] for ch in line]
        except KeyError as exc:
            raise DatasetFormatError(f"invalid character {exc.args[0]!r}", i) from None
    return out


# enumeration oracle ----------------------------------------------------------

def all_assignments(n: int) -> np.ndarray:
    """Every assignment of ``n`` binary variables; row ``r`` has ``x_i`` = bit ``i`` of ``r``."""
    r = np.arange(1 << n, dtype=np.int64)
    return ((r[:, None] >> np.arange(n)) & 1).astype(np.int8)


def assignment_index(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    return (x << np.arange(x.shape[1])).sum(axis=1)


@dataclass
class ExactDistribution:
    """Probabilities of all 2^N assignments, indexed by :func:`assignment_index`."""

    num_vars: int
    table: np.ndarray

    def prob(self, x) -> float:
        return float(self.table[assignment_index(x)[0]])

    def total(self) -> float:
        return float(self.table.sum())

    def marginal(self, subset) -> np.ndarray:
        """Joint table of the variables in ``subset`` (others summed out).

        The result has shape (2,)*len(subset) with axis k indexing
        ``subset[k]``.  An empty subset returns the full table unchanged.
        """
        subset = list(subset)
        if not subset:
            return self.table
        n = self.num_vars
        cube = self.table.reshape((2,) * n)  # axis a is variable n-1-a
        keep_axes = [n - 1 - v for v in subset]
        drop = tuple(a for a in range(n) if a not in keep_axes)
        summed = cube.sum(axis=drop) if drop else cube
        remaining = [a for a in range(n) if a not in drop]
        return np.moveaxis(summed, [remaining.index(a) for a in keep_axes], range(len(subset)))

    def marginal_of(self, evidence) -> float:
        """Probability of the observed positions of an evidence vector."""
        e = np.asarray(evidence)
        obs = [i for i, v in enumerate(e) if v != STAR]
        idx = np.arange(1 << self.num_vars)
        hit = np.ones(idx.shape, dtype=bool)
        for i in obs:
            hit &= ((idx >> i) & 1) == e[i]
        return float(self.table[hit].sum())

    def conditional(self, evidence) -> ExactDistribution:
        """The slice consistent with the observed positions, renormalized."""
        e = np.asarray(evidence)
        idx = np.arange(1 << self.num_vars)
        hit = np.ones(idx.shape, dtype=bool)
        for i, v in enumerate(e):
            if v != STAR:
                hit &= ((idx >> i) & 1) == v
        t = np.where(hit, self.table, 0.0)
        return ExactDistribution(self.num_vars, t / t.sum())

    def tvd(self, other) -> float:
        """Total variation distance to another distribution or to samples.

        ``other`` may be an :class:`ExactDistribution`, a probability table,
        or a 2-D array of fully observed samples.
        """
        if isinstance(other, ExactDistribution):
            q = other.table
        else:
            arr = np.asarray(other)
            if arr.ndim == 2:
                q = np.bincount(assignment_index(arr), minlength=1 << self.num_vars) / arr.shape[0]
            else:
                q = arr
        return 0.5 * float(np.abs(self.table - q).sum())

    def expected_sampling_tvd(self, count: int) -> float:
        """Approximate E[TVD] between ``count`` exact samples and this table."""
        p = self.table
        return 0.5 * float(np.sqrt(2.0 * p * (1 - p) / (np.pi * count)).sum())


def enumerate_distribution(network: Network, params: ParamVector, *,
                           max_vars: int = MAX_ORACLE_VARS, chunk: int = 1 << 14) -> ExactDistribution:
    from .evaluate import evaluate_batch

    n = network.num_vars
    if n > max_vars:
        raise ValueError(f"enumeration is limited to {max_vars} variables, network has {n}")
    table = np.empty(1 << n)
    for lo in range(0, 1 << n, chunk):
        r = np.arange(lo, min(1 << n, lo + chunk), dtype=np.int64)
        x = ((r[:, None] >> np.arange(n)) & 1).astype(np.int8)
        table[lo:lo + len(r)] = np.exp(evaluate_batch(network, params, x))
    return ExactDistribution(n, table)
