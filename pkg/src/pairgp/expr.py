"""Algebraic expression trees: representation, random generation, variation.

Trees are immutable after construction; all variation operators return new
trees and may share subtrees with their inputs.  The leaf alphabet is the
pair-distance variable R plus the integers in [-P, P]; internal nodes hold
one of the six operators + - * / ^ abs.
"""

from __future__ import annotations

from dataclasses import dataclass

BINARY_OPS = ("+", "-", "*", "/", "^")
UNARY_OPS = ("abs",)
OPERATORS = BINARY_OPS + UNARY_OPS

_BINARY_SET = frozenset(BINARY_OPS)

DEFAULT_P_MAX = 20


@dataclass(frozen=True)
class DepthLimits:
    """Inclusive depth window [k_min, k_max]; a lone leaf has depth 1."""

    k_min: int = 3
    k_max: int = 4

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError(f"invalid depth limits ({self.k_min}, {self.k_max})")


class Node:
    """One tree node.  op is None for leaves; a leaf with value None is R."""

    __slots__ = ("op", "value", "children", "depth", "size", "_prog")

    def __init__(self, op, value=None, children=()):
        self.op = op
        self.value = value
        self.children = children
        if children:
            self.depth = 1 + max(c.depth for c in children)
            self.size = 1 + sum(c.size for c in children)
        else:
            self.depth = 1
            self.size = 1
        self._prog = None  # lazily-filled compiled form (see fitness module)

    @property
    def is_leaf(self):
        return self.op is None

    @property
    def is_variable(self):
        return self.op is None and self.value is None

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Node):
            return NotImplemented
        return (
            self.op == other.op
            and self.value == other.value
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.op, self.value, self.children))

    def __repr__(self):
        return f"Node({to_infix(self)!r})"


#: Shared leaf for the pair-distance variable.
R = Node(None, None)


def constant(value):
    return Node(None, int(value))


def operator(op, *children):
    if op not in OPERATORS:
        raise ValueError(f"unknown operator {op!r}")
    arity = 1 if op == "abs" else 2
    if len(children) != arity:
        raise ValueError(f"operator {op!r} takes {arity} children")
    return Node(op, None, tuple(children))


def depth(tree):
    return tree.depth


def node_count(tree):
    return tree.size


# ---------------------------------------------------------------------------
# random generation

def _random_leaf(p_max, rng):
    # 2*p_max + 2 equiprobable outcomes: the integers -p_max..p_max, plus R.
    k = int(rng.integers(0, 2 * p_max + 2))
    if k == 2 * p_max + 1:
        return R
    return Node(None, k - p_max)


def _grow(budget, need, p_max, rng):
    """Grow a random subtree of depth in [max(need, 1), budget].

    need <= 1 means unconstrained.  One child per operator node stays on the
    "spine" that carries the minimum-depth obligation, so the bound holds by
    construction without rejection.
    """
    if budget == 1 or (need <= 1 and rng.random() < 0.5):
        return _random_leaf(p_max, rng)
    op = OPERATORS[int(rng.integers(0, len(OPERATORS)))]
    if op == "abs":
        return Node("abs", None, (_grow(budget - 1, need - 1, p_max, rng),))
    if need > 1:
        spine = int(rng.integers(0, 2))
        needs = (need - 1, 0) if spine == 0 else (0, need - 1)
    else:
        needs = (0, 0)
    left = _grow(budget - 1, needs[0], p_max, rng)
    right = _grow(budget - 1, needs[1], p_max, rng)
    return Node(op, None, (left, right))


def random_tree(limits, p_max, rng):
    """Uniformly-flavoured random tree with depth in [k_min, k_max]."""
    if p_max < 0:
        raise ValueError("p_max must be >= 0")
    return _grow(limits.k_max, limits.k_min, p_max, rng)


# ---------------------------------------------------------------------------
# structural helpers

def _collect(tree, path, out):
    out.append((tree, path))
    for i, child in enumerate(tree.children):
        _collect(child, path + (i,), out)


def nodes_with_paths(tree):
    """All (node, path) pairs in pre-order; path is a tuple of child indices."""
    out = []
    _collect(tree, (), out)
    return out


def nodes_at_level(tree, level):
    """(node, path) pairs at the given level; the root is level 1."""
    return [(n, p) for n, p in nodes_with_paths(tree) if len(p) + 1 == level]


def replace_subtree(tree, path, subtree):
    """New tree with the node at `path` replaced; shares untouched subtrees."""
    if not path:
        return subtree
    i = path[0]
    children = list(tree.children)
    children[i] = replace_subtree(children[i], path[1:], subtree)
    return Node(tree.op, tree.value, tuple(children))


# ---------------------------------------------------------------------------
# variation operators

def crossover(parent_a, parent_b, limits, rng, max_retries=16):
    """One child: parent_a with a level-matched subtree grafted from parent_b.

    The exchange level is drawn uniformly from {2, ..., min(depth(a), k_max)-1};
    neither the root nor the maximum depth level is eligible.  If no legal
    child emerges after max_retries, parent_a is returned unchanged.
    """
    hi = min(parent_a.depth, limits.k_max) - 1
    if hi < 2 or parent_b.depth < 2:
        return parent_a
    for _ in range(max_retries):
        level = int(rng.integers(2, hi + 1))
        targets = nodes_at_level(parent_a, level)
        _, path = targets[int(rng.integers(0, len(targets)))]
        donors = nodes_at_level(parent_b, level)
        if not donors:
            # parent_b is too shallow for this level: take its deepest
            # non-root level instead.
            donors = nodes_at_level(parent_b, parent_b.depth)
        donor, _ = donors[int(rng.integers(0, len(donors)))]
        child = replace_subtree(parent_a, path, donor)
        if limits.k_min <= child.depth <= limits.k_max:
            return child
    return parent_a


def mutate(tree, limits, rng, p_max=DEFAULT_P_MAX):
    """Replace a uniformly-chosen node's subtree with a fresh random subtree.

    The replacement depth window is chosen so the whole tree stays inside
    the limits.
    """
    nodes = nodes_with_paths(tree)
    _, path = nodes[int(rng.integers(0, len(nodes)))]
    level = len(path) + 1
    budget = limits.k_max - level + 1
    pruned = replace_subtree(tree, path, R)
    if pruned.depth >= limits.k_min:
        need = 1
    else:
        need = limits.k_min - level + 1
    subtree = _grow(budget, need, p_max, rng)
    return replace_subtree(tree, path, subtree)


# ---------------------------------------------------------------------------
# printing and parsing

def to_infix(tree):
    """Infix rendering; binary sub-expressions are always parenthesized."""
    if tree.op is None:
        if tree.value is None:
            return "R"
        return str(tree.value) if tree.value >= 0 else f"({tree.value})"
    if tree.op == "abs":
        return f"abs({to_infix(tree.children[0])})"
    a, b = tree.children
    sa = to_infix(a)
    sb = to_infix(b)
    if a.op in _BINARY_SET:
        sa = f"({sa})"
    if b.op in _BINARY_SET:
        sb = f"({sb})"
    sep = f" {tree.op} " if tree.op in ("+", "-") else tree.op
    return f"{sa}{sep}{sb}"


class ParseError(ValueError):
    def __init__(self, message, pos):
        super().__init__(f"{message} at offset {pos}")
        self.pos = pos


def _tokenize(text):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("INT", int(text[i:j]), i))
            i = j
        elif c in "+-*/^":
            tokens.append(("OP", c, i))
            i += 1
        elif c == "(":
            tokens.append(("LPAREN", c, i))
            i += 1
        elif c == ")":
            tokens.append(("RPAREN", c, i))
            i += 1
        elif text.startswith("abs", i):
            tokens.append(("ABS", "abs", i))
            i += 3
        elif c == "R":
            tokens.append(("VAR", "R", i))
            i += 1
        else:
            raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("END", None, n))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, what):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {what}", tok[2])
        return tok

    def expr(self):
        left = self.term()
        while self.peek()[0] == "OP" and self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            left = Node(op, None, (left, self.term()))
        return left

    def term(self):
        left = self.power()
        while self.peek()[0] == "OP" and self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            left = Node(op, None, (left, self.power()))
        return left

    def power(self):
        base = self.atom()
        if self.peek()[0] == "OP" and self.peek()[1] == "^":
            self.advance()
            return Node("^", None, (base, self.power()))
        return base

    def atom(self):
        kind, value, pos = self.advance()
        if kind == "VAR":
            return R
        if kind == "INT":
            return Node(None, value)
        if kind == "OP" and value == "-":
            tok = self.expect("INT", "integer after unary '-'")
            return Node(None, -tok[1])
        if kind == "LPAREN":
            inner = self.expr()
            self.expect("RPAREN", "')'")
            return inner
        if kind == "ABS":
            self.expect("LPAREN", "'(' after abs")
            inner = self.expr()
            self.expect("RPAREN", "')'")
            return Node("abs", None, (inner,))
        raise ParseError("expected 'R', integer, '(' or 'abs'", pos)


def parse_infix(text):
    parser = _Parser(_tokenize(text))
    tree = parser.expr()
    kind, _, pos = parser.peek()
    if kind != "END":
        raise ParseError("trailing input", pos)
    return tree


# ---------------------------------------------------------------------------
# search-space counting

def count_search_space(m, k, p):
    """Exact count of maximal binary-operator trees of depth k.

    (2p+2)^(2^k) leaf assignments times m^(2^k - 1) operator assignments,
    as an exact Python integer.
    """
    if m < 1 or k < 1 or p < 0:
        raise ValueError("require m >= 1, k >= 1, p >= 0")
    leaves = 2 ** k
    return (2 * p + 2) ** leaves * m ** (leaves - 1)
