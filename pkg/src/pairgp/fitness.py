"""Tree fitness: postfix compilation and fast batch evaluation.

A tree compiles once into a postfix instruction stream.  tree_fitness is the
reference scalar path; population_fitness runs a numba kernel over a packed
batch of programs and must agree with the scalar path bit-for-bit, which
both paths guarantee by using the same libm-backed scalar arithmetic.

Fitness is the negative mean squared box-energy error in eps^2 units; any
non-finite predicted box energy makes the tree's fitness -inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

OP_PUSH_CONST = 0
OP_PUSH_R = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6
OP_ABS = 7

_OPCODE = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW,
           "abs": OP_ABS}

# Every float with magnitude >= 2^53 is an exact even integer.
_TWO_53 = 9007199254740992.0
_POW_INT_TOL = 1e-9


@dataclass
class CompiledProgram:
    code: np.ndarray    # uint8 opcodes, postfix order
    consts: np.ndarray  # float64 operand per instruction (0.0 where unused)
    max_stack: int

    def __len__(self):
        return len(self.code)


def compile_tree(tree):
    """Postfix program for one tree; cached on the tree (trees are immutable)."""
    if tree._prog is not None:
        return tree._prog
    code = []
    consts = []

    def emit(node):
        if node.op is None:
            if node.value is None:
                code.append(OP_PUSH_R)
                consts.append(0.0)
            else:
                code.append(OP_PUSH_CONST)
                consts.append(float(node.value))
            return
        for child in node.children:
            emit(child)
        code.append(_OPCODE[node.op])
        consts.append(0.0)

    emit(tree)
    depth = 0
    max_depth = 0
    for op in code:
        if op in (OP_PUSH_CONST, OP_PUSH_R):
            depth += 1
            max_depth = max(max_depth, depth)
        elif op != OP_ABS:
            depth -= 1
    prog = CompiledProgram(
        np.asarray(code, dtype=np.uint8),
        np.asarray(consts, dtype=np.float64),
        max_depth,
    )
    tree._prog = prog
    return prog


def program_key(tree):
    """Bytes key identifying the evaluated function; usable for memoization."""
    prog = compile_tree(tree)
    return prog.code.tobytes() + prog.consts.tobytes()


# ---------------------------------------------------------------------------
# scalar semantics (reference path)

def _pow_value(x, y):
    """Total power rule: exp(y ln x) for x > 0; negative bases only for
    integral exponents; non-finite otherwise."""
    if x > 0.0:
        try:
            return math.exp(y * math.log(x))
        except OverflowError:
            return math.inf
    if x == 0.0:
        if y > 0.0:
            return 0.0
        if y == 0.0:
            return 1.0
        return math.inf
    if math.isnan(x) or not math.isfinite(y):
        return math.nan
    if abs(y) >= _TWO_53:  # exact even integer
        n_odd = False
    else:
        n = round(y)
        if abs(y - n) > _POW_INT_TOL:
            return math.nan
        n_odd = bool(n % 2)
    try:
        mag = math.exp(y * math.log(-x))
    except OverflowError:
        mag = math.inf
    return -mag if n_odd else mag


def _div_value(a, b):
    if b != 0.0:
        return a / b
    if a == 0.0 or math.isnan(a):
        return math.nan
    return math.copysign(math.inf, a) * math.copysign(1.0, b)


def eval_program(prog, r):
    """Evaluate the program at a single distance; non-finite values propagate."""
    stack = [0.0] * prog.max_stack
    sp = 0
    code = prog.code
    consts = prog.consts
    r = float(r)
    for i in range(len(code)):
        op = code[i]
        if op == OP_PUSH_CONST:
            stack[sp] = float(consts[i])
            sp += 1
        elif op == OP_PUSH_R:
            stack[sp] = r
            sp += 1
        elif op == OP_ABS:
            stack[sp - 1] = abs(stack[sp - 1])
        else:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                stack[sp - 1] = _div_value(a, b)
            else:
                stack[sp - 1] = _pow_value(a, b)
    return stack[0]


def tree_fitness(tree, dataset):
    """Negative mean squared box-energy error; -inf on non-finite prediction."""
    if not dataset.cases:
        raise ValueError("dataset has no cases")
    prog = compile_tree(tree)
    sq = 0.0
    for case in dataset.cases:
        acc = 0.0
        for r in case.distances:
            acc += eval_program(prog, r)
        if not math.isfinite(acc):
            return -math.inf
        diff = case.target_energy - acc
        sq += diff * diff
    return -(sq / len(dataset.cases))


# ---------------------------------------------------------------------------
# batch path (numba)

@njit(inline="always", error_model="numpy", cache=True)
def _pow_nb(x, y):
    if x > 0.0:
        return math.exp(y * math.log(x))
    if x == 0.0:
        if y > 0.0:
            return 0.0
        if y == 0.0:
            return 1.0
        return np.inf
    if math.isnan(x) or not math.isfinite(y):
        return np.nan
    n_odd = False
    if abs(y) < _TWO_53:
        n = round(y)
        if abs(y - n) > _POW_INT_TOL:
            return np.nan
        n_odd = n % 2 != 0
    mag = math.exp(y * math.log(-x))
    return -mag if n_odd else mag


@njit(parallel=True, error_model="numpy", nogil=True, cache=True)
def _fitness_kernel(code, consts, tree_off, max_stack, dists, box_off, targets):
    n_trees = len(tree_off) - 1
    n_boxes = len(box_off) - 1
    out = np.empty(n_trees)
    for t in prange(n_trees):
        stack = np.empty(max_stack)
        lo = tree_off[t]
        hi = tree_off[t + 1]
        sq = 0.0
        bad = False
        for b in range(n_boxes):
            acc = 0.0
            for di in range(box_off[b], box_off[b + 1]):
                r = dists[di]
                sp = 0
                for ip in range(lo, hi):
                    op = code[ip]
                    if op == OP_PUSH_CONST:
                        stack[sp] = consts[ip]
                        sp += 1
                    elif op == OP_PUSH_R:
                        stack[sp] = r
                        sp += 1
                    elif op == OP_ABS:
                        stack[sp - 1] = abs(stack[sp - 1])
                    else:
                        sp -= 1
                        y = stack[sp]
                        x = stack[sp - 1]
                        if op == OP_ADD:
                            stack[sp - 1] = x + y
                        elif op == OP_SUB:
                            stack[sp - 1] = x - y
                        elif op == OP_MUL:
                            stack[sp - 1] = x * y
                        elif op == OP_DIV:
                            stack[sp - 1] = x / y
                        else:
                            stack[sp - 1] = _pow_nb(x, y)
                acc += stack[0]
            if not math.isfinite(acc):
                bad = True
                break
            diff = targets[b] - acc
            sq += diff * diff
        out[t] = -np.inf if bad else -(sq / n_boxes)
    return out


def _packed_dataset(dataset):
    packed = getattr(dataset, "_packed", None)
    if packed is None:
        dists = []
        box_off = [0]
        targets = []
        for case in dataset.cases:
            dists.extend(case.distances)
            box_off.append(len(dists))
            targets.append(case.target_energy)
        packed = (
            np.asarray(dists, dtype=np.float64),
            np.asarray(box_off, dtype=np.int64),
            np.asarray(targets, dtype=np.float64),
        )
        dataset._packed = packed
    return packed


def population_fitness(trees, dataset):
    """Fitness of every tree; elementwise equal to tree_fitness, any order."""
    if not trees:
        return []
    progs = [compile_tree(t) for t in trees]
    tree_off = np.zeros(len(progs) + 1, dtype=np.int64)
    for i, p in enumerate(progs):
        tree_off[i + 1] = tree_off[i] + len(p)
    code = np.concatenate([p.code for p in progs])
    consts = np.concatenate([p.consts for p in progs])
    max_stack = max(p.max_stack for p in progs)
    dists, box_off, targets = _packed_dataset(dataset)
    out = _fitness_kernel(code, consts, tree_off, max_stack, dists, box_off, targets)
    return [float(f) for f in out]
