"""JSON model files.

Sum nodes carry their logits (17 significant digits, so values round-trip
exactly) and the id of the logit block they use; nodes sharing a block must
carry identical logits.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .graph import Block, Indicator, Network, Product, Quotient, StructuralError, Sum
from .params import ParamVector

VERSION = 1


class ModelFormatError(ValueError):
    pass


def _num(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite logit {x}")
    return format(float(x), ".17g")


def dumps(network: Network, params: ParamVector) -> str:
    lines = []
    for v, node in enumerate(network.nodes):
        if isinstance(node, Indicator):
            body = f'"kind": "indicator", "var": {node.var}, "value": {node.value}'
        elif isinstance(node, Sum):
            b = network.blocks[node.block]
            logits = ", ".join(_num(z) for z in params.logits[b.offset:b.stop])
            body = (f'"kind": "sum", "children": {list(node.children)}, "logits": [{logits}], '
                    f'"block": {node.block}, "frozen": {"true" if b.frozen else "false"}')
        elif isinstance(node, Product):
            body = f'"kind": "product", "children": {list(node.children)}'
        else:
            body = f'"kind": "quotient", "num": {node.numerator}, "den": {node.denominator}'
        lines.append(f'    {{"id": {v}, {body}}}')
    blocks = ", ".join(f'{{"offset": {b.offset}, "size": {b.size}}}' for b in network.blocks)
    return (f'{{\n  "version": {VERSION},\n  "num_vars": {network.num_vars},\n  "root": {network.root},\n'
            f'  "blocks": [{blocks}],\n  "nodes": [\n' + ",\n".join(lines) + "\n  ]\n}\n")


def save_model(path, network: Network, params: ParamVector) -> None:
    Path(path).write_text(dumps(network, params))


def loads(text: str) -> tuple[Network, ParamVector]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from None
    if data.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {data.get('version')!r}")
    try:
        num_vars = int(data["num_vars"])
        root = int(data["root"])
        raw = data["nodes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"missing or malformed top-level field: {exc}") from None

    nodes = []
    block_logits: dict[int, list[float]] = {}
    block_frozen: dict[int, bool] = {}
    fresh = []  # sums without an explicit block id
    for pos, item in enumerate(raw):
        if item.get("id") != pos:
            raise ModelFormatError(f"node at position {pos} has id {item.get('id')!r}")
        kind = item.get("kind")
        try:
            if kind == "indicator":
                nodes.append(Indicator(int(item["var"]), int(item["value"])))
            elif kind == "product":
                nodes.append(Product(tuple(int(c) for c in item["children"])))
            elif kind == "quotient":
                nodes.append(Quotient(int(item["num"]), int(item["den"])))
            elif kind == "sum":
                children = tuple(int(c) for c in item["children"])
                logits = [float(z) for z in item["logits"]]
                if len(logits) != len(children):
                    raise ModelFormatError(f"sum {pos} has {len(children)} children but {len(logits)} logits")
                if "block" in item:
                    blk = int(item["block"])
                    if blk in block_logits and block_logits[blk] != logits:
                        raise ModelFormatError(f"sum {pos} disagrees with other users of block {blk}")
                    block_logits[blk] = logits
                    block_frozen[blk] = bool(item.get("frozen", False))
                else:
                    blk = None
                    fresh.append((pos, logits, bool(item.get("frozen", False))))
                nodes.append(Sum(children, -1 if blk is None else blk))
            else:
                raise ModelFormatError(f"node {pos} has unknown kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"node {pos} is missing field {exc}") from None

    layout = data.get("blocks")
    blocks: list[Block] = []
    values: list[float] = []
    if layout is not None:
        for k, spec in enumerate(layout):
            blocks.append(Block(int(spec["offset"]), int(spec["size"]), block_frozen.get(k, False)))
        need = max((b.stop for b in blocks), default=0)
        values = [0.0] * need
        for k, logits in block_logits.items():
            if not 0 <= k < len(blocks) or blocks[k].size != len(logits):
                raise ModelFormatError(f"block {k} does not match the declared layout")
            values[blocks[k].offset:blocks[k].stop] = logits
    else:
        remap = {}
        for k in sorted(block_logits):
            remap[k] = len(blocks)
            blocks.append(Block(len(values), len(block_logits[k]), block_frozen[k]))
            values.extend(block_logits[k])
        nodes = [Sum(n.children, remap[n.block]) if isinstance(n, Sum) and n.block >= 0 else n for n in nodes]
    for pos, logits, frozen in fresh:
        blocks.append(Block(len(values), len(logits), frozen))
        values.extend(logits)
        nodes[pos] = Sum(nodes[pos].children, len(blocks) - 1)
    try:
        net = Network(num_vars, tuple(nodes), root, tuple(blocks))
    except StructuralError as exc:
        raise ModelFormatError(f"invalid network: {exc}") from exc
    return net, ParamVector(np.array(values, dtype=np.float64), net.blocks)


def load_model(path) -> tuple[Network, ParamVector]:
    return loads(Path(path).read_text())
