"""Exact log-space evaluation of SPQNs.

Evaluation is compiled into a level-by-level program: nodes are grouped by
height and kind, so a batch of evidence vectors is processed with a handful
of numpy operations per level.  Values are laid out node-major, shape
``(num_nodes + 2, batch)``; the two trailing rows are constants log 1 and
log 0 used to pad ragged child lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import STAR, Indicator, Network, Product, Quotient, Sum, as_evidence_batch
from .params import ParamVector

NEG_INF = -np.inf


class EvaluationError(ArithmeticError):
    def __init__(self, message: str, node: int | None = None, sample: int | None = None):
        super().__init__(message)
        self.node = node
        self.sample = sample


class StarPatternError(ValueError):
    """Evidence marginalizes variables in a way the network cannot answer exactly."""


@dataclass
class _Group:
    ids: np.ndarray
    child: np.ndarray | None = None   # (k, max_children), padded
    widx: np.ndarray | None = None    # (k, max_children) into extended log weights
    num: np.ndarray | None = None
    den: np.ndarray | None = None


class Program:
    """Compiled evaluation schedule of one network."""

    def __init__(self, network: Network):
        self.network = network
        n = len(network.nodes)
        self.size = n
        self.one = n          # row holding log 1
        self.zero = n + 1     # row holding log 0
        pad_w = network.num_params  # index of the -inf slot in extended log weights
        height = [0] * n
        for v in network.order:
            node = network.nodes[v]
            if not isinstance(node, Indicator):
                height[v] = 1 + max(height[c] for c in node.children)
        self.height = height
        top = max(height) if n else 0
        by_level: list[dict[str, list[int]]] = [{"i": [], "s": [], "p": [], "q": []} for _ in range(top + 1)]
        for v, node in enumerate(network.nodes):
            kind = {Indicator: "i", Sum: "s", Product: "p", Quotient: "q"}[type(node)]
            by_level[height[v]][kind].append(v)
        leaves = by_level[0]["i"]
        self.ind_ids = np.array(leaves, dtype=np.intp)
        self.ind_var = np.array([network.nodes[v].var for v in leaves], dtype=np.intp)
        self.ind_val = np.array([network.nodes[v].value for v in leaves], dtype=np.int8)
        self.levels: list[tuple[_Group | None, _Group | None, _Group | None]] = []
        for lvl in by_level[1:]:
            sums = prods = quots = None
            if lvl["s"]:
                child = _pad([network.nodes[v].children for v in lvl["s"]], self.zero)
                widx = np.full(child.shape, pad_w, dtype=np.intp)
                for r, v in enumerate(lvl["s"]):
                    b = network.blocks[network.nodes[v].block]
                    widx[r, :b.size] = np.arange(b.offset, b.stop)
                sums = _Group(np.array(lvl["s"], dtype=np.intp), child, widx)
            if lvl["p"]:
                prods = _Group(np.array(lvl["p"], dtype=np.intp),
                               _pad([network.nodes[v].children for v in lvl["p"]], self.one))
            if lvl["q"]:
                quots = _Group(np.array(lvl["q"], dtype=np.intp),
                               num=np.array([network.nodes[v].numerator for v in lvl["q"]], dtype=np.intp),
                               den=np.array([network.nodes[v].denominator for v in lvl["q"]], dtype=np.intp))
            self.levels.append((sums, prods, quots))
        self.block_of = np.zeros(network.num_params, dtype=np.intp)
        for k, b in enumerate(network.blocks):
            self.block_of[b.offset:b.stop] = k

    def extended_log_weights(self, params: ParamVector) -> np.ndarray:
        return np.append(params.flat_log_weights(), NEG_INF)

    def forward(self, lw: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Values of every node, shape (num_nodes + 2, batch)."""
        batch = x.shape[0]
        vals = np.empty((self.size + 2, batch))
        vals[self.one] = 0.0
        vals[self.zero] = NEG_INF
        xv = x[:, self.ind_var].T
        hit = (xv == self.ind_val[:, None]) | (xv == STAR)
        vals[self.ind_ids] = np.where(hit, 0.0, NEG_INF)
        for sums, prods, quots in self.levels:
            if sums is not None:
                vals[sums.ids] = _lse_rows(vals[sums.child] + lw[sums.widx][:, :, None])
            if prods is not None:
                vals[prods.ids] = vals[prods.child].sum(axis=1)
            if quots is not None:
                den = vals[quots.den]
                bad = np.isneginf(den)
                if bad.any():
                    r, s = np.argwhere(bad)[0]
                    raise EvaluationError(
                        f"quotient node {quots.ids[r]} has a zero denominator (sample {s})",
                        int(quots.ids[r]), int(s))
                vals[quots.ids] = vals[quots.num] - den
        return vals

    def backward(self, lw: np.ndarray, vals: np.ndarray, root_adjoint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reverse sweep of d(root)/d(node) in the log domain.

        Returns ``(node_adjoints, log_weight_gradient)`` where the latter is
        summed over the batch and indexed like the extended log weights.
        """
        batch = vals.shape[1]
        g = np.zeros_like(vals)
        g[self.network.root] = root_adjoint
        glw = np.zeros(lw.shape[0])
        for sums, prods, quots in reversed(self.levels):
            if quots is not None:
                gq = g[quots.ids]
                np.add.at(g, quots.num, gq)
                np.add.at(g, quots.den, -gq)
            if prods is not None:
                gp = np.broadcast_to(g[prods.ids][:, None, :], prods.child.shape + (batch,))
                np.add.at(g, prods.child.ravel(), gp.reshape(-1, batch))
            if sums is not None:
                parent = vals[sums.ids]
                parent = np.where(np.isneginf(parent), 0.0, parent)
                resp = np.exp(vals[sums.child] + lw[sums.widx][:, :, None] - parent[:, None, :])
                contrib = g[sums.ids][:, None, :] * resp
                np.add.at(g, sums.child.ravel(), contrib.reshape(-1, batch))
                np.add.at(glw, sums.widx.ravel(), contrib.sum(axis=2).ravel())
        return g, glw


def _pad(rows, fill: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.intp)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def _lse_rows(a: np.ndarray) -> np.ndarray:
    """log-sum-exp over axis 1 with the max shift; all -inf rows give -inf."""
    m = a.max(axis=1)
    shift = np.where(np.isneginf(m), 0.0, m)
    with np.errstate(divide="ignore"):
        return shift + np.log(np.exp(a - shift[:, None, :]).sum(axis=1))


def program(network: Network) -> Program:
    prog = network.__dict__.get("_program")
    if prog is None:
        prog = Program(network)
        network.__dict__["_program"] = prog
    return prog


def _check_stars(network: Network, x: np.ndarray, unsafe: bool) -> None:
    if unsafe or not (x == STAR).any():
        return
    from .validate import star_pattern_ok

    ok = star_pattern_ok(network, x)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise StarPatternError(
            f"evidence row {bad} marginalizes a conditioning variable of a node whose "
            "effective scope is not fully marginalized; pass unsafe=True to evaluate anyway")


def evaluate_batch(network: Network, params: ParamVector, evidence, *,
                   unsafe: bool = False, chunk: int = 4096) -> np.ndarray:
    """log Psi_root for every row of an evidence batch."""
    x = as_evidence_batch(evidence, network.num_vars)
    _check_stars(network, x, unsafe)
    prog = program(network)
    lw = prog.extended_log_weights(params)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], chunk):
        try:
            vals = prog.forward(lw, x[start:start + chunk])
        except EvaluationError as err:
            err.sample = None if err.sample is None else err.sample + start
            raise
        out[start:start + chunk] = vals[network.root]
    return out


def evaluate(network: Network, params: ParamVector, evidence, *, unsafe: bool = False) -> float:
    """log Psi_root(evidence).  Star entries are marginalized."""
    x = as_evidence_batch(evidence, network.num_vars)
    if x.shape[0] != 1:
        raise ValueError("evaluate takes a single evidence vector; use evaluate_batch")
    return float(evaluate_batch(network, params, x, unsafe=unsafe)[0])


@dataclass(frozen=True)
class EvalTrace:
    """Per-node log values for one evidence vector, in topological order."""

    order: tuple[int, ...]
    values: np.ndarray
    root: int
    by_node: np.ndarray

    def __len__(self) -> int:
        return len(self.order)

    def __getitem__(self, node: int) -> float:
        return float(self.by_node[node])

    @property
    def root_value(self) -> float:
        return self[self.root]


def evaluate_trace(network: Network, params: ParamVector, evidence, *, unsafe: bool = False) -> EvalTrace:
    x = as_evidence_batch(evidence, network.num_vars)
    if x.shape[0] != 1:
        raise ValueError("evaluate_trace takes a single evidence vector")
    _check_stars(network, x, unsafe)
    prog = program(network)
    vals = prog.forward(prog.extended_log_weights(params), x)[:, 0]
    order = tuple(network.order)
    return EvalTrace(order, vals[list(order)].copy(), network.root, vals[:len(network.nodes)].copy())


def mean_log_likelihood(network: Network, params: ParamVector, dataset, *, unsafe: bool = False) -> float:
    if len(dataset) == 0:
        raise ValueError("mean log-likelihood of an empty dataset")
    x = as_evidence_batch(dataset, network.num_vars)
    if x.shape[0] == 0:
        raise ValueError("mean log-likelihood of an empty dataset")
    ll = evaluate_batch(network, params, x, unsafe=unsafe)
    if np.isneginf(ll).any():
        return NEG_INF
    return float(ll.mean())
