"""Binary inclusion trees: node types, routing, JSON and plain-text rendering."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Leaf:
    label: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def node_depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(node_depth(node.left), node_depth(node.right))


def n_leaves(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return n_leaves(node.left) + n_leaves(node.right)


def predict_node(node: Node, x: np.ndarray) -> np.ndarray:
    """Route rows of ``x``; ``x[feature] <= threshold`` goes left."""
    x = np.atleast_2d(x)
    out = np.empty(x.shape[0], dtype=np.int8)
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if isinstance(nd, Leaf):
            out[rows] = nd.label
            continue
        go_left = x[rows, nd.feature] <= nd.threshold
        stack.append((nd.left, rows[go_left]))
        stack.append((nd.right, rows[~go_left]))
    return out


def node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": int(node.label)}
    return {
        "feature": int(node.feature),
        "threshold": float(node.threshold),
        "left": node_to_dict(node.left),
        "right": node_to_dict(node.right),
    }


def node_from_dict(d: dict) -> Node:
    if "leaf" in d:
        return Leaf(int(d["leaf"]))
    return Split(int(d["feature"]), float(d["threshold"]), node_from_dict(d["left"]), node_from_dict(d["right"]))


def _obj_out(v: float):
    return None if v is None or math.isinf(v) else float(v)


def _obj_in(v) -> float:
    return math.inf if v is None else float(v)


@dataclass(frozen=True)
class WeightTree:
    root: Node
    objective: float = math.inf
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def depth(self) -> int:
        return node_depth(self.root)

    @property
    def n_leaves(self) -> int:
        return n_leaves(self.root)

    def predict(self, x) -> np.ndarray:
        return predict_node(self.root, np.asarray(x, dtype=float))

    def __call__(self, x) -> np.ndarray:
        return self.predict(x)

    def structure_key(self) -> str:
        return json.dumps(node_to_dict(self.root), sort_keys=True)

    def to_dict(self) -> dict:
        out = {"objective": _obj_out(self.objective), "seed": self.seed, "root": node_to_dict(self.root)}
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WeightTree":
        extra = {k: v for k, v in d.items() if k not in ("objective", "seed", "root")}
        return cls(node_from_dict(d["root"]), _obj_in(d.get("objective")), d.get("seed"), extra)


def tree_predict(t: WeightTree, x) -> int | np.ndarray:
    x = np.asarray(x, dtype=float)
    out = t.predict(x)
    return int(out[0]) if x.ndim == 1 else out


def render(node: Node, feature_names: Sequence[str] | None = None) -> str:
    """Indented ``if``/``else`` rendering; a constant tree is one line."""
    if isinstance(node, Leaf):
        return f"w = {node.label} (everywhere)"

    def name(j):
        return feature_names[j] if feature_names is not None else f"X{j}"

    lines = []

    def walk(nd, indent):
        pad = "  " * indent
        if isinstance(nd, Leaf):
            lines.append(f"{pad}w = {nd.label}")
            return
        lines.append(f"{pad}if {name(nd.feature)} <= {nd.threshold!r}:")
        walk(nd.left, indent + 1)
        lines.append(f"{pad}else:")
        walk(nd.right, indent + 1)

    walk(node, 0)
    return "\n".join(lines)


_IF = re.compile(r"^if (.+) <= (\S+):$")
_LEAF = re.compile(r"^w = ([01])$")


def parse_rendering(text: str, feature_names: Sequence[str] | None = None) -> Node:
    """Inverse of :func:`render`."""
    text = text.strip("\n")
    const = re.fullmatch(r"w = ([01]) \(everywhere\)", text.strip())
    if const:
        return Leaf(int(const.group(1)))
    lines = [ln for ln in text.split("\n") if ln.strip()]
    pos = 0

    def index_of(feat: str) -> int:
        if feature_names is not None and feat in feature_names:
            return list(feature_names).index(feat)
        m = re.fullmatch(r"X(\d+)", feat)
        if m is None:
            raise ValueError(f"unknown feature {feat!r}")
        return int(m.group(1))

    def parse(indent):
        nonlocal pos
        line = lines[pos]
        body = line[2 * indent :]
        if line[: 2 * indent].strip() or body.startswith(" "):
            raise ValueError(f"bad indentation at line {pos + 1}: {line!r}")
        pos += 1
        leaf = _LEAF.match(body)
        if leaf:
            return Leaf(int(leaf.group(1)))
        cond = _IF.match(body)
        if cond is None:
            raise ValueError(f"cannot parse line {pos}: {line!r}")
        left = parse(indent + 1)
        if lines[pos].strip() != "else:":
            raise ValueError(f"expected else at line {pos + 1}")
        pos += 1
        right = parse(indent + 1)
        return Split(index_of(cond.group(1)), float(cond.group(2)), left, right)

    node = parse(0)
    if pos != len(lines):
        raise ValueError("trailing lines after tree")
    return node
