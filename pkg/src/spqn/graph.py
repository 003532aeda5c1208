"""Computational graph of a Sum-Product-Quotient Network.

A network is an immutable rooted DAG whose nodes are referenced by dense
integer ids.  Scopes are kept as Python ints used as bitsets over the
variables (bit ``i`` set means variable ``i`` is in the set).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

ZERO, ONE, STAR = 0, 1, 2
NodeId = int


class StructuralError(ValueError):
    """Raised when a network is malformed (cycle, dangling reference, ...)."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True, slots=True)
class Indicator:
    var: int
    value: int


@dataclass(frozen=True, slots=True)
class Sum:
    children: tuple[int, ...]
    block: int


@dataclass(frozen=True, slots=True)
class Product:
    children: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Quotient:
    numerator: int
    denominator: int

    @property
    def children(self) -> tuple[int, int]:
        return (self.numerator, self.denominator)


Node = Union[Indicator, Sum, Product, Quotient]


def children_of(node: Node) -> tuple[int, ...]:
    if isinstance(node, Indicator):
        return ()
    return node.children


@dataclass(frozen=True, slots=True)
class Block:
    """A contiguous run of logits feeding one or more sum nodes."""

    offset: int
    size: int
    frozen: bool = False

    @property
    def stop(self) -> int:
        return self.offset + self.size


def bits(indices: Iterable[int]) -> int:
    out = 0
    for i in indices:
        out |= 1 << i
    return out


def members(bitset: int) -> list[int]:
    out = []
    i = 0
    while bitset:
        if bitset & 1:
            out.append(i)
        bitset >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class ScopeTable:
    """Per-node scope, effective scope and conditional scope as bitsets."""

    scope: tuple[int, ...]
    effective: tuple[int, ...]
    conditional: tuple[int, ...]

    def sets(self, node: int) -> tuple[set[int], set[int], set[int]]:
        return (set(members(self.scope[node])),
                set(members(self.effective[node])),
                set(members(self.conditional[node])))


def topological_order(nodes: Sequence[Node], root: int | None = None) -> list[int]:
    """Children-first order of the nodes reachable from ``root``.

    With ``root=None`` every node is ordered.  Ties are broken by node id, so
    the order is a deterministic function of the node list.
    """
    n = len(nodes)
    if root is None:
        reachable = range(n)
    else:
        seen = {root}
        stack = [root]
        while stack:
            v = stack.pop()
            for c in children_of(nodes[v]):
                if not 0 <= c < n:
                    raise StructuralError(f"node {v} references missing node {c}", v)
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        reachable = sorted(seen)
    pending = {}
    parents: dict[int, list[int]] = {v: [] for v in reachable}
    for v in reachable:
        chs = set(children_of(nodes[v]))
        for c in chs:
            if not 0 <= c < n:
                raise StructuralError(f"node {v} references missing node {c}", v)
            parents[c].append(v)
        pending[v] = len(chs)
    ready = [v for v in reachable if pending[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for p in parents[v]:
            pending[p] -= 1
            if pending[p] == 0:
                heapq.heappush(ready, p)
    if len(order) != len(pending):
        stuck = min(v for v, k in pending.items() if k > 0)
        raise StructuralError(f"cycle detected through node {stuck}", stuck)
    return order


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable SPQN.  Construction validates the graph.

    ``blocks`` describes the logit layout; every sum node points at one block
    whose size equals its child count.  Several sum nodes may share a block.
    """

    num_vars: int
    nodes: tuple[Node, ...]
    root: int
    blocks: tuple[Block, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        n = len(self.nodes)
        if not 0 <= self.root < n:
            raise StructuralError(f"root {self.root} does not exist")
        for v, node in enumerate(self.nodes):
            if isinstance(node, Indicator):
                if not 0 <= node.var < self.num_vars:
                    raise StructuralError(
                        f"indicator {v} uses variable {node.var} outside [0, {self.num_vars})", v)
                if node.value not in (0, 1):
                    raise StructuralError(f"indicator {v} has value {node.value}", v)
            elif isinstance(node, (Sum, Product)):
                if not node.children:
                    raise StructuralError(f"node {v} has no children", v)
                if isinstance(node, Sum):
                    if not 0 <= node.block < len(self.blocks):
                        raise StructuralError(f"sum {v} references missing block {node.block}", v)
                    if self.blocks[node.block].size != len(node.children):
                        raise StructuralError(
                            f"sum {v} has {len(node.children)} children but block "
                            f"{node.block} holds {self.blocks[node.block].size} logits", v)
            elif not isinstance(node, Quotient):
                raise StructuralError(f"node {v} has unknown kind {type(node).__name__}", v)
        full = topological_order(self.nodes)
        object.__setattr__(self, "_full_order", full)
        order = topological_order(self.nodes, self.root)
        if len(order) != n:
            dead = min(set(range(n)) - set(order))
            raise StructuralError(f"node {dead} is unreachable from the root", dead)
        object.__setattr__(self, "order", order)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_params(self) -> int:
        return max((b.stop for b in self.blocks), default=0)

    @cached_property
    def scopes(self) -> ScopeTable:
        return compute_scopes(self)

    @cached_property
    def parents(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for v, node in enumerate(self.nodes):
            for c in dict.fromkeys(children_of(node)):
                out[c].append(v)
        return out

    @cached_property
    def quotients(self) -> list[int]:
        return [v for v, node in enumerate(self.nodes) if isinstance(node, Quotient)]

    def count_kinds(self) -> dict[str, int]:
        out = {"indicator": 0, "sum": 0, "product": 0, "quotient": 0}
        for node in self.nodes:
            out[type(node).__name__.lower()] += 1
        return out

    def product_child_order(self, product: int) -> list[int] | None:
        """Children of ``product`` sorted along their dependency graph.

        Computed once and cached.  ``None`` if the dependency graph is cyclic.
        """
        cache = self.__dict__.setdefault("_child_orders", {})
        if product not in cache:
            cache[product] = _sort_dependency_graph(child_dependency_graph(self, self.scopes, product))
        return cache[product]

    def subnetwork(self, root: int) -> Network:
        """The sub-graph rooted at ``root`` as a standalone network.

        Node ids are renumbered densely; the logit layout is kept as is.
        """
        keep = topological_order(self.nodes, root)
        remap = {old: new for new, old in enumerate(keep)}
        nodes = []
        for old in keep:
            node = self.nodes[old]
            if isinstance(node, Sum):
                node = Sum(tuple(remap[c] for c in node.children), node.block)
            elif isinstance(node, Product):
                node = Product(tuple(remap[c] for c in node.children))
            elif isinstance(node, Quotient):
                node = Quotient(remap[node.numerator], remap[node.denominator])
            nodes.append(node)
        return Network(self.num_vars, tuple(nodes), remap[root], self.blocks)


def compute_scopes(network: Network) -> ScopeTable:
    """Scope, effective scope and conditional scope of every node."""
    n = len(network.nodes)
    scope = [0] * n
    eff = [0] * n
    for v in network._full_order:
        node = network.nodes[v]
        if isinstance(node, Indicator):
            scope[v] = eff[v] = 1 << node.var
        elif isinstance(node, Quotient):
            scope[v] = scope[node.numerator] | scope[node.denominator]
            eff[v] = eff[node.numerator] & ~eff[node.denominator]
        else:
            s = e = 0
            for c in node.children:
                s |= scope[c]
                e |= eff[c]
            scope[v], eff[v] = s, e
    cond = tuple(s & ~e for s, e in zip(scope, eff))
    return ScopeTable(tuple(scope), tuple(eff), cond)


@dataclass(frozen=True)
class DependencyGraph:
    vertices: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def successors(self, v: int) -> list[int]:
        return [b for (a, b) in self.edges if a == v]

    def has_cycle(self) -> bool:
        return _sort_dependency_graph(self) is None


def child_dependency_graph(network: Network, scopes: ScopeTable, product: int) -> DependencyGraph:
    """Directed graph over the distinct children of a product node.

    There is an edge ``a -> b`` when the effective scope of ``a`` meets the
    conditional scope of ``b`` (``b`` depends on ``a``).
    """
    node = network.nodes[product]
    if not isinstance(node, Product):
        raise TypeError(f"node {product} is not a product node")
    chs = tuple(dict.fromkeys(node.children))
    edges = set()
    for a in chs:
        for b in chs:
            if a != b and scopes.effective[a] & scopes.conditional[b]:
                edges.add((a, b))
    return DependencyGraph(chs, frozenset(edges))


def _sort_dependency_graph(graph: DependencyGraph) -> list[int] | None:
    indeg = {v: 0 for v in graph.vertices}
    succ: dict[int, list[int]] = {v: [] for v in graph.vertices}
    for a, b in graph.edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        v = heapq.heappop(ready)
        out.append(v)
        for b in succ[v]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(ready, b)
    return out if len(out) == len(graph.vertices) else None


class NetworkBuilder:
    """Append-only construction of a network and its initial logits."""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.nodes: list[Node] = []
        self.blocks: list[Block] = []
        self.logits: list[float] = []
        self._indicators: dict[tuple[int, int], int] = {}

    def _add(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def indicator(self, var: int, value: int) -> int:
        """Indicator node for ``x_var == value``; one node per (var, value)."""
        if not 0 <= var < self.num_vars:
            raise ValueError(f"variable {var} outside [0, {self.num_vars})")
        key = (var, value)
        if key not in self._indicators:
            self._indicators[key] = self._add(Indicator(var, value))
        return self._indicators[key]

    def new_block(self, logits: Sequence[float], frozen: bool = False) -> int:
        logits = [float(x) for x in logits]
        if not logits:
            raise ValueError("a block needs at least one logit")
        self.blocks.append(Block(len(self.logits), len(logits), frozen))
        self.logits.extend(logits)
        return len(self.blocks) - 1

    def sum(self, children: Sequence[int], block: int | None = None,
            logits: Sequence[float] | None = None, frozen: bool = False) -> int:
        if block is None:
            block = self.new_block(np.zeros(len(children)) if logits is None else logits, frozen)
        elif logits is not None:
            raise ValueError("pass either a shared block or fresh logits, not both")
        return self._add(Sum(tuple(children), block))

    def product(self, children: Sequence[int]) -> int:
        return self._add(Product(tuple(children)))

    def quotient(self, numerator: int, denominator: int) -> int:
        return self._add(Quotient(numerator, denominator))

    def build(self, root: int):
        """Finalize.  Returns ``(network, params)``."""
        from .params import ParamVector

        net = Network(self.num_vars, tuple(self.nodes), root, tuple(self.blocks))
        return net, ParamVector(np.array(self.logits, dtype=np.float64), net.blocks)


# evidence helpers -----------------------------------------------------------

_CHARS = {"0": ZERO, "1": ONE, "*": STAR}


def parse_evidence(text: str) -> np.ndarray:
    try:
        return np.array([_CHARS[ch] for ch in text], dtype=np.int8)
    except KeyError as exc:
        raise ValueError(f"invalid evidence character {exc.args[0]!r}") from None


def format_evidence(x: Sequence[int]) -> str:
    return "".join("01*"[int(v)] for v in x)


def as_evidence_batch(evidence, num_vars: int) -> np.ndarray:
    """Coerce evidence (string, vector or batch) to an int8 array of shape (B, N)."""
    if isinstance(evidence, str):
        evidence = parse_evidence(evidence)
    elif isinstance(evidence, (list, tuple)) and evidence and isinstance(evidence[0], str):
        evidence = np.stack([parse_evidence(e) for e in evidence])
    x = np.asarray(evidence, dtype=np.int8)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != num_vars:
        raise ValueError(f"evidence must have length {num_vars}, got shape {x.shape}")
    if x.size and (x.min() < 0 or x.max() > STAR):
        raise ValueError("evidence entries must be 0, 1 or STAR")
    return x


def star_mask(x: Sequence[int]) -> int:
    return bits(i for i, v in enumerate(x) if v == STAR)
