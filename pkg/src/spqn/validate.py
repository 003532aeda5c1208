"""Structural tractability checks for SPQNs.

Every check returns a :class:`ValidationReport`; rule identifiers are stable
strings so callers can assert on the exact failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import (
    STAR,
    Indicator,
    Network,
    Product,
    Quotient,
    ScopeTable,
    Sum,
    child_dependency_graph,
    members,
    star_mask,
)
from .params import ParamVector

MAX_ENUM_VARS = 20


@dataclass(frozen=True)
class Violation:
    node: int
    rule: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed

    def add(self, node: int, rule: str, detail: str) -> None:
        self.violations.append(Violation(node, rule, detail))

    def extend(self, other: ValidationReport) -> ValidationReport:
        self.violations.extend(other.violations)
        return self

    @property
    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def lines(self) -> list[str]:
        out = [f"{v.rule}\tnode={v.node}\t{v.detail}" for v in self.violations]
        out.append("PASS" if self.passed else "FAIL")
        return out


@dataclass(frozen=True)
class CmoAnnotation:
    """Layout of one conditional mixing operator inside a network.

    ``row_terms[i]`` is the node computing row ``i`` of the numerator mixture.
    For ``alpha == 0`` there is no quotient: ``root`` is the numerator sum and
    ``denominator``/``a_products``/``b_products`` may be empty.
    """

    root: int
    gamma: int
    alpha: int
    beta: int
    a_children: tuple[tuple[int, ...], ...]
    b_children: tuple[tuple[int, ...], ...]
    block: int
    numerator: int
    denominator: int | None = None
    row_terms: tuple[int, ...] = ()
    a_products: tuple[int, ...] = ()
    b_products: tuple[int | None, ...] = ()


def _fmt(bitset: int) -> str:
    return "{" + ",".join(map(str, members(bitset))) + "}"


# completeness / decomposability --------------------------------------------

def _sum_complete(network, scopes, v, conditional, report):
    table = scopes.effective if conditional else scopes.scope
    rule = "cond-complete" if conditional else "complete"
    chs = network.nodes[v].children
    first = chs[0]
    for c in chs[1:]:
        if table[c] != table[first]:
            report.add(v, rule, f"children {first} and {c} have scopes "
                                f"{_fmt(table[first])} and {_fmt(table[c])}")


def _product_decomposable(network, scopes, v, conditional, report):
    table = scopes.effective if conditional else scopes.scope
    rule = "cond-decomp-disjoint" if conditional else "decomp-disjoint"
    chs = list(dict.fromkeys(network.nodes[v].children))
    if len(chs) != len(network.nodes[v].children):
        report.add(v, rule, "a child appears more than once")
    for i, a in enumerate(chs):
        for b in chs[i + 1:]:
            common = table[a] & table[b]
            if common:
                report.add(v, rule, f"children {a} and {b} share variables {_fmt(common)}")
    if conditional:
        graph = child_dependency_graph(network, scopes, v)
        if graph.has_cycle():
            report.add(v, "cond-decomp-acyclic", "child dependency graph contains a cycle")


def check_complete(network: Network, scopes: ScopeTable | None = None,
                   conditional: bool = False) -> ValidationReport:
    scopes = scopes or network.scopes
    report = ValidationReport()
    for v, node in enumerate(network.nodes):
        if isinstance(node, Sum):
            _sum_complete(network, scopes, v, conditional, report)
    return report


def check_decomposable(network: Network, scopes: ScopeTable | None = None,
                       conditional: bool = False) -> ValidationReport:
    scopes = scopes or network.scopes
    report = ValidationReport()
    for v, node in enumerate(network.nodes):
        if isinstance(node, Product):
            _product_decomposable(network, scopes, v, conditional, report)
    return report


def check_dnc(network: Network, scopes: ScopeTable | None = None) -> ValidationReport:
    """Plain SPN decomposability and completeness; quotient nodes are rejected."""
    scopes = scopes or network.scopes
    report = check_complete(network, scopes).extend(check_decomposable(network, scopes))
    for q in network.quotients:
        report.add(q, "dnc-quotient", "quotient nodes are not allowed in an SPN")
    return report


def check_conditional_dnc(network: Network, scopes: ScopeTable | None = None) -> ValidationReport:
    scopes = scopes or network.scopes
    return check_complete(network, scopes, True).extend(check_decomposable(network, scopes, True))


def check_root_unconditional(network: Network, scopes: ScopeTable | None = None) -> ValidationReport:
    scopes = scopes or network.scopes
    report = ValidationReport()
    r = network.root
    if scopes.conditional[r]:
        report.add(r, "root-unconditional", f"root is conditioned on {_fmt(scopes.conditional[r])}")
    full = (1 << network.num_vars) - 1
    if scopes.effective[r] != full:
        report.add(r, "root-unconditional",
                   f"root covers {_fmt(scopes.effective[r])}, not all {network.num_vars} variables")
    return report


# valid CMOs ------------------------------------------------------------------

def _is_base_case(network: Network, ann: CmoAnnotation) -> bool:
    if (ann.gamma, ann.alpha, ann.beta) != (2, 0, 1):
        return False
    leaves = [network.nodes[row[0]] for row in ann.b_children]
    if not all(isinstance(n, Indicator) for n in leaves):
        return False
    return leaves[0].var == leaves[1].var and {leaves[0].value, leaves[1].value} == {0, 1}


def _check_cmo_structure(network: Network, ann: CmoAnnotation, report: ValidationReport) -> bool:
    def bad(msg):
        report.add(ann.root, "cmo-structure", msg)
        return False

    nodes = network.nodes
    if ann.beta <= 0 or ann.gamma < 1:
        return bad(f"need beta > 0 and gamma >= 1, got gamma={ann.gamma} beta={ann.beta}")
    if len(ann.a_children) != ann.gamma or len(ann.b_children) != ann.gamma:
        return bad("child matrices do not have gamma rows")
    if any(len(r) != ann.alpha for r in ann.a_children) or any(len(r) != ann.beta for r in ann.b_children):
        return bad("child matrices do not have alpha/beta columns")
    num = nodes[ann.numerator]
    if not isinstance(num, Sum) or num.block != ann.block or len(num.children) != ann.gamma:
        return bad(f"numerator {ann.numerator} is not a gamma-way sum over the CMO block")
    if tuple(num.children) != tuple(ann.row_terms):
        return bad("numerator children differ from the annotated row terms")
    if ann.alpha == 0:
        if ann.root != ann.numerator:
            return bad("an alpha = 0 CMO is its own numerator sum")
        for i, term in enumerate(ann.row_terms):
            want = ann.b_children[i]
            got = (term,) if ann.beta == 1 else _product_children(nodes, term)
            if got != want:
                return bad(f"row {i} does not multiply its B children")
        return True
    root = nodes[ann.root]
    if not isinstance(root, Quotient) or root.numerator != ann.numerator or root.denominator != ann.denominator:
        return bad("root is not the quotient of the annotated numerator and denominator")
    den = nodes[ann.denominator]
    if not isinstance(den, Sum) or den.block != ann.block:
        return bad("denominator is not a sum over the CMO block")
    if tuple(den.children) != tuple(ann.a_products):
        return bad("denominator children are not the shared A products")
    for i in range(ann.gamma):
        if _product_children(nodes, ann.row_terms[i]) != (ann.a_products[i], ann.b_products[i]):
            return bad(f"row {i} is not the product of its A and B products")
        if _product_children(nodes, ann.a_products[i]) != ann.a_children[i]:
            return bad(f"A product of row {i} does not match its A children")
        if _product_children(nodes, ann.b_products[i]) != ann.b_children[i]:
            return bad(f"B product of row {i} does not match its B children")
    return True


def _product_children(nodes, v):
    node = nodes[v]
    return tuple(node.children) if isinstance(node, Product) else None


def check_valid_cmo(network: Network, scopes: ScopeTable | None,
                    annotations: Sequence[CmoAnnotation]) -> ValidationReport:
    """Check that the network is composed of valid conditional mixing operators.

    Every quotient must be the root of an annotated CMO.  Each CMO is either
    the leaf base case (two indicators of one variable) or has only CMO roots
    as children, conditionally complete internal sums, conditionally
    decomposable internal products with no B-to-A dependency, and B rows of
    equal effective scope.
    """
    scopes = scopes or network.scopes
    report = ValidationReport()
    by_root = {a.root: a for a in annotations}
    covered = {q for a in annotations for q in [a.root]}
    missing = [q for q in network.quotients if q not in covered]
    if missing:
        raise ValueError(f"no CMO annotation for quotient node(s) {missing}")

    internal: dict[int, int] = {}
    for ann in annotations:
        for v in (ann.numerator, ann.denominator, *ann.row_terms, *ann.a_products, *ann.b_products):
            if v is not None and v != ann.root:
                internal[v] = ann.root
    for v, node in enumerate(network.nodes):
        if isinstance(node, Indicator) or v in by_root:
            continue
        if v not in internal:
            report.add(v, "cmo-foreign", "node is neither an indicator nor part of a CMO")
    root = network.root
    if root not in by_root:
        report.add(root, "cmo-foreign", "network root is not a CMO")

    for ann in annotations:
        if not _check_cmo_structure(network, ann, report):
            continue
        if _is_base_case(network, ann):
            continue
        for row in (*ann.a_children, *ann.b_children):
            for c in row:
                if isinstance(network.nodes[c], Indicator):
                    report.add(ann.root, "cmo-base",
                               f"indicator child {c} outside the two-indicator base case")
                elif c not in by_root:
                    report.add(ann.root, "cmo-child", f"child {c} is not a CMO")
        sub = ValidationReport()
        for s in (ann.numerator, ann.denominator):
            if s is not None:
                _sum_complete(network, scopes, s, True, sub)
        prods = [p for p in (*ann.row_terms, *ann.a_products, *ann.b_products)
                 if p is not None and isinstance(network.nodes[p], Product)]
        for p in dict.fromkeys(prods):
            _product_decomposable(network, scopes, p, True, sub)
        report.extend(sub)
        for i in range(ann.gamma):
            for b in ann.b_children[i]:
                for a in ann.a_children[i]:
                    if scopes.effective[b] & scopes.conditional[a]:
                        report.add(ann.root, "cmo-b-to-a",
                                   f"A child {a} of row {i} depends on B child {b}")
        b_eff = [_union(scopes.effective, row) for row in ann.b_children]
        if len(set(b_eff)) > 1:
            report.add(ann.root, "cmo-b-scope",
                       "B rows have different effective scopes: " + ", ".join(_fmt(e) for e in b_eff))
    return report


def _union(table, nodes: Iterable[int]) -> int:
    out = 0
    for v in nodes:
        out |= table[v]
    return out


def infer_cmo_annotations(network: Network) -> list[CmoAnnotation]:
    """Recover CMO annotations from the shape of a network.

    Quotients whose numerator and denominator are sums over one shared block
    become general CMOs; every other sum becomes an ``alpha = 0`` CMO.  Shapes
    that do not fit are still annotated on a best-effort basis so the
    structural check can report them.
    """
    nodes = network.nodes
    out: list[CmoAnnotation] = []
    claimed: set[int] = set()
    for q in network.quotients:
        qn = nodes[q]
        num, den = nodes[qn.numerator], nodes[qn.denominator]
        rows = tuple(num.children) if isinstance(num, Sum) else ()
        a_prods = tuple(den.children) if isinstance(den, Sum) else ()
        a_children, b_children, b_prods = [], [], []
        for i, term in enumerate(rows):
            pair = _product_children(nodes, term) or ()
            a_p = pair[0] if len(pair) == 2 else None
            b_p = pair[1] if len(pair) == 2 else None
            a_children.append(_product_children(nodes, a_p) or () if a_p is not None else ())
            b_children.append(_product_children(nodes, b_p) or () if b_p is not None else ())
            b_prods.append(b_p)
        alpha = len(a_children[0]) if a_children else 0
        beta = len(b_children[0]) if b_children else 0
        block = num.block if isinstance(num, Sum) else -1
        out.append(CmoAnnotation(q, len(rows), alpha, beta, tuple(a_children), tuple(b_children),
                                 block, qn.numerator, qn.denominator, rows, a_prods, tuple(b_prods)))
        claimed.update((qn.numerator, qn.denominator))
    for v, node in enumerate(nodes):
        if not isinstance(node, Sum) or v in claimed:
            continue
        b_rows = []
        for c in node.children:
            pc = _product_children(nodes, c)
            b_rows.append(pc if pc is not None else (c,))
        beta = len(b_rows[0])
        out.append(CmoAnnotation(v, len(b_rows), 0, beta, tuple(() for _ in b_rows), tuple(b_rows),
                                 node.block, v, None, tuple(node.children)))
    return out


# brute-force soundness -------------------------------------------------------

def _assignments(vars_: list[int], num_vars: int, base: np.ndarray | None = None) -> np.ndarray:
    """All 2^k assignments of ``vars_``; other positions copied from ``base`` (Star by default).

    Row ``r`` sets ``vars_[j]`` to bit ``j`` of ``r``.
    """
    k = len(vars_)
    x = np.full((1 << k, num_vars), STAR, dtype=np.int8)
    if base is not None:
        x[:] = base
    r = np.arange(1 << k)
    for j, v in enumerate(vars_):
        x[:, v] = (r >> j) & 1
    return x


def check_soundness_bruteforce(network: Network, scopes: ScopeTable | None, params: ParamVector,
                               *, max_vars: int = MAX_ENUM_VARS, rtol: float = 1e-9) -> ValidationReport:
    """Enumerative check of strong conditional soundness at every quotient.

    For each quotient ``v`` and each assignment of its scope: the denominator
    is positive, it equals the numerator summed over the effective scope of
    ``v``, and it equals the numerator with the effective scope set to Star.
    """
    from .evaluate import program

    if network.num_vars > max_vars:
        raise ValueError(f"brute-force soundness needs at most {max_vars} variables, "
                         f"network has {network.num_vars}")
    scopes = scopes or network.scopes
    report = ValidationReport()
    prog = program(network)
    lw = prog.extended_log_weights(params)
    for q in network.quotients:
        node = network.nodes[q]
        sv = members(scopes.scope[q])
        eff = scopes.effective[q]
        x = _assignments(sv, network.num_vars)
        vals = _forward_unchecked(prog, lw, x)
        num, den = vals[node.numerator], vals[node.denominator]
        vanish = ~(den > -np.inf)  # NaN marks rows where some quotient below failed
        if vanish.any():
            report.add(q, "sound-positive",
                       f"denominator {node.denominator} vanishes on {int(vanish.sum())} "
                       f"of {den.size} assignments of the scope")
            continue
        # marginalize the numerator over the effective-scope bits
        k = len(sv)
        eff_axes = tuple(k - 1 - j for j, v in enumerate(sv) if eff >> v & 1)
        table = num.reshape((2,) * k) if k else num
        m = table.max(axis=eff_axes, keepdims=True) if eff_axes else table
        shift = np.where(np.isneginf(m), 0.0, m)
        with np.errstate(divide="ignore"):
            marg = shift + np.log(np.exp(table - shift).sum(axis=eff_axes, keepdims=True))
        marg = np.broadcast_to(marg, table.shape).reshape(-1)
        err = np.abs(np.expm1(marg - den))
        if not np.all(err <= rtol):
            report.add(q, "sound-marginal",
                       f"denominator differs from the numerator marginal by rel. {err.max():.3e}")
        xs = x.copy()
        for v in members(eff):
            xs[:, v] = STAR
        starred = _forward_unchecked(prog, lw, xs)[node.numerator]
        err = np.abs(np.expm1(starred - den))
        if not np.all(err <= rtol):
            report.add(q, "sound-strong",
                       f"numerator with Star on the effective scope differs from the denominator "
                       f"by rel. {np.nanmax(err):.3e}")
    return report


def _forward_unchecked(prog, lw, x):
    """Forward pass that tolerates zero denominators (reported as NaN rows)."""
    from .evaluate import EvaluationError

    try:
        return prog.forward(lw, x)
    except EvaluationError:
        rows = []
        for i in range(x.shape[0]):
            try:
                rows.append(prog.forward(lw, x[i:i + 1])[:, 0])
            except EvaluationError:
                rows.append(np.full(prog.size + 2, np.nan))
        vals = np.stack(rows, axis=1)
        return vals


# star patterns ---------------------------------------------------------------

def _star_tables(network: Network):
    cache = network.__dict__.get("_star_tables")
    if cache is None:
        scopes = network.scopes
        conditioned = [v for v in range(len(network.nodes)) if scopes.conditional[v]]
        n = network.num_vars
        cond = np.zeros((len(conditioned), n), dtype=np.int32)
        eff = np.zeros((len(conditioned), n), dtype=np.int32)
        for r, v in enumerate(conditioned):
            cond[r, members(scopes.conditional[v])] = 1
            eff[r, members(scopes.effective[v])] = 1
        cache = (cond, eff)
        network.__dict__["_star_tables"] = cache
    return cache


def star_pattern_ok(network: Network, x, *, chunk: int = 4096) -> np.ndarray:
    """Vectorized :func:`check_star_pattern` over an evidence batch."""
    x = np.atleast_2d(np.asarray(x))
    cond, eff = _star_tables(network)
    out = np.ones(x.shape[0], dtype=bool)
    if cond.shape[0] == 0:
        return out
    for start in range(0, x.shape[0], chunk):
        star = (x[start:start + chunk] == STAR).astype(np.int32)
        touched = star @ cond.T > 0
        observed_eff = (1 - star) @ eff.T > 0
        out[start:start + chunk] = ~(touched & observed_eff).any(axis=1)
    return out


def check_star_pattern(network: Network, scopes: ScopeTable | None, evidence) -> bool:
    """True when marginalizing the Star positions of ``evidence`` is exact.

    The rule: any node whose conditional scope contains a Star variable must
    have its whole effective scope starred as well.
    """
    scopes = scopes or network.scopes
    stars = star_mask(evidence)
    for v in range(len(network.nodes)):
        if scopes.conditional[v] & stars and scopes.effective[v] & ~stars:
            return False
    return True
