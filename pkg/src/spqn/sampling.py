"""Ancestral sampling from strongly conditionally sound SPQNs.

The traversal is the usual top-down one, except that quotients descend into
their numerator only and product children are visited in the topological
order of their dependency graph.  Children whose effective scope is already
sampled are skipped.  A sum picks child ``c`` with probability proportional
to ``w_c * Psi_c(s)`` for the current partial sample ``s``.

All samples of a batch walk the graph together; each row carries its own
random stream, so a row's result depends only on ``(seed, index)``.
"""

from __future__ import annotations

import numpy as np

from .graph import STAR, Indicator, Network, Product, Quotient, ScopeTable, Sum, members
from .evaluate import NEG_INF, program
from .params import ParamVector
from .rng import stream_keys, uniforms
from .validate import check_star_pattern


class SamplingError(RuntimeError):
    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class _Sampler:
    def __init__(self, network: Network, params: ParamVector, x: np.ndarray, keys: np.ndarray,
                 incremental: bool):
        self.net = network
        self.nodes = network.nodes
        self.scopes = network.scopes
        self.prog = program(network)
        self.lw = self.prog.extended_log_weights(params)
        self.x = x
        self.keys = keys
        self.counters = np.zeros(x.shape[0], dtype=np.uint64)
        self.incremental = incremental
        n = len(self.nodes)
        self.vals = np.empty((n, x.shape[0]))
        self.dirty = np.ones(n, dtype=bool)
        self.touches = _var_to_nodes(network)
        self.eff_vars = [np.array(members(e), dtype=np.intp) for e in self.scopes.effective]
        self.order = np.array(network.order, dtype=np.intp)
        self.position = np.empty(n, dtype=np.intp)
        self.position[self.order] = np.arange(n)
        self.below: dict[int, np.ndarray] = {}

    # cache ----------------------------------------------------------------
    def _descendants(self, v: int) -> np.ndarray:
        """Strict descendants of ``v`` in topological order."""
        if v not in self.below:
            seen = set()
            stack = list(self.nodes[v].children)
            while stack:
                c = stack.pop()
                if c not in seen:
                    seen.add(c)
                    node = self.nodes[c]
                    if not isinstance(node, Indicator):
                        stack.extend(node.children)
            found = np.fromiter(seen, dtype=np.intp, count=len(seen))
            self.below[v] = found[np.argsort(self.position[found])]
        return self.below[v]

    def refresh(self, v: int):
        """Bring every node below ``v`` up to date with the partial samples."""
        if not self.incremental:
            self.dirty[:] = True
            todo = self.order
        else:
            need = self._descendants(v)
            todo = need[self.dirty[need]]
        for u in todo:
            self.vals[u] = self._node_value(u)
        self.dirty[todo] = False

    def _node_value(self, v: int) -> np.ndarray:
        node = self.nodes[v]
        vals = self.vals
        if isinstance(node, Indicator):
            col = self.x[:, node.var]
            return np.where((col == node.value) | (col == STAR), 0.0, NEG_INF)
        if isinstance(node, Product):
            return vals[list(node.children)].sum(axis=0)
        if isinstance(node, Quotient):
            den = vals[node.denominator]
            if np.isneginf(den).any():
                raise SamplingError(f"quotient node {v} has a zero denominator", v)
            return vals[node.numerator] - den
        b = self.net.blocks[node.block]
        a = vals[list(node.children)] + self.lw[b.offset:b.stop, None]
        m = a.max(axis=0)
        shift = np.where(np.isneginf(m), 0.0, m)
        with np.errstate(divide="ignore"):
            return shift + np.log(np.exp(a - shift).sum(axis=0))

    # traversal ------------------------------------------------------------
    def visit(self, v: int, rows: np.ndarray):
        node = self.nodes[v]
        if isinstance(node, Quotient):
            self.visit(node.numerator, rows)
        elif isinstance(node, Product):
            order = self.net.product_child_order(v)
            if order is None:
                raise SamplingError(f"product node {v} has a cyclic dependency graph", v)
            for c in order:
                eff = self.eff_vars[c]
                if eff.size == 0:
                    continue
                pending = rows[(self.x[np.ix_(rows, eff)] == STAR).any(axis=1)]
                if pending.size:
                    self.visit(c, pending)
        elif isinstance(node, Sum):
            self.refresh(v)
            b = self.net.blocks[node.block]
            a = self.vals[np.ix_(node.children, rows)] + self.lw[b.offset:b.stop, None]
            m = a.max(axis=0)
            if np.isneginf(m).any():
                raise SamplingError(f"sum node {v}: every child has zero probability", v)
            p = np.exp(a - m)
            cdf = np.cumsum(p, axis=0)
            u = uniforms(self.keys[rows], self.counters[rows]) * cdf[-1]
            self.counters[rows] += np.uint64(1)
            choice = np.minimum((cdf <= u).sum(axis=0), len(node.children) - 1)
            for k in np.unique(choice):
                self.visit(node.children[k], rows[choice == k])
        else:
            col = self.x[rows, node.var]
            free = col == STAR
            if free.any():
                self.x[rows[free], node.var] = node.value
                self.dirty |= self.touches[node.var]


def _var_to_nodes(network: Network) -> np.ndarray:
    cache = network.__dict__.get("_var_to_nodes")
    if cache is None:
        cache = np.zeros((network.num_vars, len(network.nodes)), dtype=bool)
        for v, s in enumerate(network.scopes.scope):
            cache[members(s), v] = True
        network.__dict__["_var_to_nodes"] = cache
    return cache


def sample_batch(network: Network, params: ParamVector, scopes: ScopeTable | None = None,
                 partial=None, count: int = 1, rng_seed: int = 0, *, start: int | None = None,
                 first_index: int = 0, incremental: bool = True, chunk: int = 4096) -> np.ndarray:
    """``count`` samples as an int8 array of shape (count, N).

    ``partial`` fixes observed positions (Star = to be sampled); it must be a
    conditioning set the network can answer exactly.  Sample ``k`` uses the
    random stream ``(rng_seed, first_index + k)``.
    """
    scopes = scopes or network.scopes
    start = network.root if start is None else start
    n = network.num_vars
    if partial is None:
        base = np.full(n, STAR, dtype=np.int8)
    else:
        from .graph import as_evidence_batch

        base = as_evidence_batch(partial, n)[0].copy()
    if not check_star_pattern(network, scopes, base):
        raise ValueError("the observed positions of the partial sample are not a valid "
                         "conditioning set for this network")
    out = np.empty((count, n), dtype=np.int8)
    eff = members(scopes.effective[start])
    for lo in range(0, count, chunk):
        hi = min(count, lo + chunk)
        x = np.tile(base, (hi - lo, 1))
        sampler = _Sampler(network, params, x, stream_keys(rng_seed, np.arange(first_index + lo, first_index + hi)),
                           incremental)
        rows = np.arange(hi - lo)
        if eff and (x[:, eff] == STAR).any():
            sampler.visit(start, rows)
        if eff and (x[:, eff] == STAR).any():
            raise SamplingError("traversal left part of the effective scope unsampled", start)
        out[lo:hi] = x
    return out


def sample(network: Network, params: ParamVector, scopes: ScopeTable | None = None,
           start: int | None = None, partial=None, rng_seed: int = 0, *,
           incremental: bool = True) -> np.ndarray:
    """One sample: the partial evidence with the effective scope of ``start`` filled in."""
    return sample_batch(network, params, scopes, partial, 1, rng_seed, start=start,
                        incremental=incremental)[0]
