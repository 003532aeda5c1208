"""Sum-Product-Quotient Networks over binary variables."""

from .graph import (
    ONE,
    STAR,
    ZERO,
    Indicator,
    Network,
    NetworkBuilder,
    Product,
    Quotient,
    ScopeTable,
    StructuralError,
    Sum,
    child_dependency_graph,
    compute_scopes,
    format_evidence,
    parse_evidence,
    topological_order,
)
from .params import ParamVector

__version__ = "0.1.0"
