"""Constructors for concrete SPQN architectures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .graph import NetworkBuilder
from .params import randomized
from .validate import CmoAnnotation


@dataclass(frozen=True)
class CmoRows:
    """Row products of a CMO, reusable by several CMOs with different weights."""

    a_children: tuple[tuple[int, ...], ...]
    b_children: tuple[tuple[int, ...], ...]
    row_terms: tuple[int, ...]
    a_products: tuple[int, ...]
    b_products: tuple[int | None, ...]

    @property
    def gamma(self) -> int:
        return len(self.row_terms)

    @property
    def alpha(self) -> int:
        return len(self.a_children[0])

    @property
    def beta(self) -> int:
        return len(self.b_children[0])


class SPQNBuilder(NetworkBuilder):
    """Network builder that also records CMO annotations."""

    def __init__(self, num_vars: int):
        super().__init__(num_vars)
        self.annotations: list[CmoAnnotation] = []

    def leaf_cmo(self, var: int, logits: Sequence[float] = (0.0, 0.0), *,
                 block: int | None = None, frozen: bool = False) -> int:
        """w0 * 1[x_var = 0] + w1 * 1[x_var = 1]."""
        rows = self.cmo_rows([[]] * 2, [[self.indicator(var, 0)], [self.indicator(var, 1)]])
        if block is None:
            block = self.new_block(logits, frozen)
        return self.cmo_from_rows(rows, block)

    def cmo_rows(self, a_children, b_children) -> CmoRows:
        a_children = tuple(tuple(r) for r in a_children)
        b_children = tuple(tuple(r) for r in b_children)
        gamma = len(b_children)
        if gamma < 1 or len(a_children) != gamma:
            raise ValueError("A and B need the same number (>= 1) of rows")
        alpha, beta = len(a_children[0]), len(b_children[0])
        if beta == 0:
            raise ValueError("a CMO needs at least one B column")
        if any(len(r) != alpha for r in a_children) or any(len(r) != beta for r in b_children):
            raise ValueError("ragged CMO child matrix")
        if alpha == 0:
            terms = tuple(r[0] if beta == 1 else self.product(r) for r in b_children)
            return CmoRows(a_children, b_children, terms, (), ())
        a_prods, b_prods, terms = [], [], []
        for a_row, b_row in zip(a_children, b_children):
            a_p = self.product(a_row)
            b_p = self.product(b_row)
            a_prods.append(a_p)
            b_prods.append(b_p)
            terms.append(self.product([a_p, b_p]))
        return CmoRows(a_children, b_children, tuple(terms), tuple(a_prods), tuple(b_prods))

    def cmo_from_rows(self, rows: CmoRows, block: int) -> int:
        num = self.sum(rows.row_terms, block=block)
        if rows.alpha == 0:
            self.annotations.append(CmoAnnotation(
                num, rows.gamma, 0, rows.beta, rows.a_children, rows.b_children, block, num,
                None, rows.row_terms))
            return num
        den = self.sum(rows.a_products, block=block)
        root = self.quotient(num, den)
        self.annotations.append(CmoAnnotation(
            root, rows.gamma, rows.alpha, rows.beta, rows.a_children, rows.b_children, block,
            num, den, rows.row_terms, rows.a_products, rows.b_products))
        return root

    def mixture(self, children: Sequence[int], block: int) -> int:
        """Weighted sum of CMOs, recorded as a CMO with a single B column."""
        rows = self.cmo_rows([[]] * len(children), [[c] for c in children])
        return self.cmo_from_rows(rows, block)

    def cmo(self, a_children, b_children, logits: Sequence[float] | None = None, *,
            frozen: bool = False) -> int:
        """sum_i w_i (prod_j A_ij)(prod_j B_ij) / sum_i w_i prod_j A_ij.

        The A products are shared by numerator and denominator; with no A
        columns the denominator is 1 and the numerator mixture is returned.
        """
        rows = self.cmo_rows(a_children, b_children)
        block = self.new_block(np.zeros(rows.gamma) if logits is None else logits, frozen)
        return self.cmo_from_rows(rows, block)

    def finish(self, root: int):
        net, params = self.build(root)
        return net, params, list(self.annotations)


def build_leaf_cmo(var: int = 0, init_logits: Sequence[float] = (0.0, 0.0), num_vars: int | None = None):
    b = SPQNBuilder(var + 1 if num_vars is None else num_vars)
    return b.finish(b.leaf_cmo(var, init_logits))


def build_cmo(a_children, b_children, logits, builder: SPQNBuilder) -> int:
    return builder.cmo(a_children, b_children, logits)


# convolutional SPQN ---------------------------------------------------------

@dataclass(frozen=True)
class ConvLayerSpec:
    stride: int
    rf: int
    channels: int

    def __post_init__(self):
        if self.stride < 1 or self.channels < 1:
            raise ValueError(f"stride and channels must be positive: {self}")
        if self.rf < self.stride:
            raise ValueError(f"receptive field {self.rf} is smaller than stride {self.stride}")


@dataclass(frozen=True)
class ConvNetSpec:
    input_length: int
    layers: tuple[ConvLayerSpec, ...]
    leaf_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.leaf_channels < 1:
            raise ValueError("leaf_channels must be positive")
        if not self.layers:
            raise ValueError("at least one layer is required")
        self.lengths()  # raises on bad divisibility
        if self.layers[-1].channels != 1:
            raise ValueError("the last layer must have a single channel")

    def lengths(self) -> list[int]:
        out = []
        n = self.input_length
        for d, layer in enumerate(self.layers, 1):
            if n % layer.stride:
                raise ValueError(f"layer {d}: input length {n} is not divisible by stride {layer.stride}")
            n //= layer.stride
            out.append(n)
        if out[-1] != 1:
            raise ValueError(f"final spatial length is {out[-1]}, expected 1")
        return out

    def without_overlap(self) -> ConvNetSpec:
        return ConvNetSpec(self.input_length,
                           tuple(ConvLayerSpec(l.stride, l.stride, l.channels) for l in self.layers),
                           self.leaf_channels)

    def to_json(self) -> dict:
        return {"input_length": self.input_length, "leaf_channels": self.leaf_channels,
                "layers": [{"stride": l.stride, "rf": l.rf, "channels": l.channels} for l in self.layers]}

    @classmethod
    def from_json(cls, data: dict) -> ConvNetSpec:
        layers = tuple(ConvLayerSpec(int(l["stride"]), int(l["rf"]), int(l["channels"])) for l in data["layers"])
        return cls(int(data["input_length"]), layers, int(data.get("leaf_channels", 1)))

    @classmethod
    def load(cls, path) -> ConvNetSpec:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_conv_spqn(spec: ConvNetSpec, seed=0):
    """1-D convolutional SPQN.  Returns ``(network, params, annotations)``.

    Output ``t`` of layer ``d`` (0-based) sees input positions
    ``tS .. tS+S-1`` as its effective window and ``(t+1)S-R .. tS-1`` as its
    conditioning window, clipped at position 0.  Column ``j`` (1-based) of
    the window is position ``(t+1)S - j``; it gets its own channel-mixing
    weights ``W_in[i, j]`` shared across positions, and the row weights
    ``W_out[c]`` are shared across positions too.
    """
    b = SPQNBuilder(spec.input_length)
    leaf_blocks = [b.new_block([0.0, 0.0]) for _ in range(spec.leaf_channels)]
    prev = [[b.leaf_cmo(p, block=leaf_blocks[k]) for k in range(spec.leaf_channels)]
            for p in range(spec.input_length)]
    for layer, length in zip(spec.layers, spec.lengths()):
        s, r, c_out = layer.stride, layer.rf, layer.channels
        c_in = len(prev[0])
        w_in = [[b.new_block(np.zeros(c_in)) for _ in range(r)] for _ in range(c_out)]
        w_out = [b.new_block(np.zeros(c_out)) for _ in range(c_out)]
        out = []
        for t in range(length):
            cols = [(t + 1) * s - j for j in range(1, r + 1)]
            cols = [p for p in cols if p >= 0]
            a_rows, b_rows = [], []
            for i in range(c_out):
                mix = [b.mixture(prev[p], w_in[i][j]) for j, p in enumerate(cols)]
                b_rows.append(mix[:s])
                a_rows.append(mix[s:])
            rows = b.cmo_rows(a_rows, b_rows)
            out.append([b.cmo_from_rows(rows, w_out[c]) for c in range(c_out)])
        prev = out
    net, params, anns = b.finish(prev[0][0])
    return net, randomized(params, seed), anns


def build_baseline_spn(spec: ConvNetSpec, seed=0):
    """The same architecture without conditioning windows: a plain D&C SPN."""
    return build_conv_spqn(spec.without_overlap(), seed)


# triangle-free SPQN ----------------------------------------------------------

def edge_index(i: int, j: int, m: int) -> int:
    """Index of edge {i, j} (1-based vertices, i < j) in lexicographic order."""
    if not 1 <= i < j <= m:
        raise ValueError(f"bad edge ({i}, {j}) for {m} vertices")
    return (i - 1) * m - (i - 1) * i // 2 + (j - i - 1)


def edge_list(m: int) -> list[tuple[int, int]]:
    return list(combinations(range(1, m + 1), 2))


def build_trianglefree_spqn(m: int, *, root_pair: tuple[int, int] | None = None):
    """SPQN whose support is exactly the triangle-free graphs on ``m`` vertices.

    One variable per edge, lexicographic order.  Edge ``(i2, i3)`` with
    ``i2 > 1`` gets a conditional factor over the edges ``(i1, i2)``,
    ``(i1, i3)`` for ``i1 < i2``; edges ``(1, i)`` are fair coins.  All weights
    are fixed and their blocks frozen.  Returns ``(network, params)``; with
    ``root_pair`` the network is rooted at that single conditional factor.
    """
    if m < 2:
        raise ValueError("need at least two vertices")
    n = m * (m - 1) // 2
    b = SPQNBuilder(n)
    e = lambda i, j: edge_index(i, j, m)  # noqa: E731
    uniform: dict[int, int] = {}

    def coin(var):
        if var not in uniform:
            uniform[var] = b.leaf_cmo(var, frozen=True)
        return uniform[var]

    def ind(var, val):
        return b.indicator(var, val)

    factor = {}
    for i2, i3 in edge_list(m):
        if root_pair is not None and (i2, i3) != tuple(root_pair):
            continue
        if i2 == 1:
            factor[(i2, i3)] = coin(e(1, i3))
            continue
        # at most one of the two edges closing a triangle through i1, each of 3 cases w.p. 1/3
        phi1 = b.product([
            b.sum([b.product([ind(e(i1, i2), 1), ind(e(i1, i3), 0)]),
                   b.product([ind(e(i1, i2), 0), ind(e(i1, i3), 1)]),
                   b.product([ind(e(i1, i2), 0), ind(e(i1, i3), 0)])], frozen=True)
            for i1 in range(1, i2)])
        # some i1 has both edges; everything else uniform
        terms = []
        for i1 in range(1, i2):
            kids = [ind(e(i1, i2), 1), ind(e(i1, i3), 1)]
            for other in range(1, i2):
                if other != i1:
                    kids += [coin(e(other, i2)), coin(e(other, i3))]
            terms.append(b.product(kids))
        phi2 = b.sum(terms, frozen=True)
        var = e(i2, i3)
        factor[(i2, i3)] = b.cmo([[phi1], [phi2]], [[coin(var)], [ind(var, 0)]], [0.0, 0.0], frozen=True)
    if root_pair is not None:
        if tuple(root_pair) not in factor:
            raise ValueError(f"no edge {root_pair} for {m} vertices")
        return b.build(factor[tuple(root_pair)])
    return b.build(b.product([factor[p] for p in edge_list(m)]))


def has_triangle(edges: Sequence[int], m: int) -> bool:
    """Independent triangle predicate over an edge assignment."""
    for i1, i2, i3 in combinations(range(1, m + 1), 3):
        if edges[edge_index(i1, i2, m)] and edges[edge_index(i2, i3, m)] and edges[edge_index(i1, i3, m)]:
            return True
    return False


# random valid-CMO networks ---------------------------------------------------

def random_cmo_network(num_vars: int, depth: int = 3, seed=0, *, max_gamma: int = 3,
                       reuse: float = 0.3):
    """Random network composed of valid CMOs over ``num_vars`` variables.

    Conditioning is introduced by giving B children conditioning sets drawn
    from the A variables and earlier B groups.  With probability ``reuse`` an
    already built node with the same (effective, conditional) signature is
    shared instead of building a new one.
    """
    rng = np.random.default_rng(seed)
    b = SPQNBuilder(num_vars)
    cache: dict[tuple[frozenset, frozenset], list[int]] = {}

    def logits(k):
        return rng.normal(0.0, 1.0, size=k)

    def partition(vars_, parts):
        vars_ = list(rng.permutation(vars_))
        cuts = sorted(rng.choice(np.arange(1, len(vars_)), size=parts - 1, replace=False)) if parts > 1 else []
        out, start = [], 0
        for c in list(cuts) + [len(vars_)]:
            out.append([int(v) for v in vars_[start:c]])
            start = c
        return out

    def subset(pool):
        pool = sorted(pool)
        if not pool:
            return []
        return [v for v in pool if rng.random() < 0.5]

    def gen(eff, cond, d):
        key = (frozenset(eff), frozenset(cond))
        if cache.get(key) and rng.random() < reuse:
            return cache[key][int(rng.integers(len(cache[key])))]
        if not cond and len(eff) == 1 and (d <= 1 or rng.random() < 0.4):
            node = b.leaf_cmo(eff[0], logits(2))
        else:
            gamma = int(rng.integers(1, max_gamma + 1))
            n_a = int(rng.integers(1, len(cond) + 1)) if cond else 0
            n_b = int(rng.integers(1, len(eff) + 1))
            if d <= 1:
                n_a, n_b = len(cond), len(eff)
            a_rows, b_rows = [], []
            for _ in range(gamma):
                row, seen = [], []
                for g in partition(cond, n_a) if cond else []:
                    row.append(gen(g, [] if d <= 1 else subset(seen), d - 1))
                    seen += g
                a_rows.append(row)
                row, seen = [], list(cond)
                for g in partition(eff, n_b):
                    row.append(gen(g, [] if d <= 1 else subset(seen), d - 1))
                    seen += g
                b_rows.append(row)
            node = b.cmo(a_rows, b_rows, logits(gamma))
        cache.setdefault(key, []).append(node)
        return node

    root = gen(list(range(num_vars)), [], depth)
    return b.finish(root)
