"""Manufactured training data: periodic atom boxes with Lennard-Jones targets.

A dataset is a set of boxes of randomly placed atoms.  For each box the pair
distances inside the interaction window (r_lo, r_hi) are extracted, counting
periodic images, and the target box energy is the Lennard-Jones sum over
those distances.  A (spec, seed) pair fully determines the dataset.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, asdict

import numpy as np


class InfeasibleBoxError(ValueError):
    """Atom placement failed within the proposal budget."""


class DatasetFormatError(ValueError):
    """A dataset file does not match the expected schema."""


@dataclass(frozen=True)
class BoxSpec:
    n_atoms: int = 10
    box_length: float = 3.0
    d_min: float = 0.5
    r_lo: float = 0.7
    r_hi: float = 2.0
    epsilon: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not (0.0 < self.d_min <= self.r_lo < self.r_hi):
            raise ValueError("require 0 < d_min <= r_lo < r_hi")
        if not self.r_hi < self.box_length:
            # single-image-shell enumeration would miss interactions otherwise
            raise ValueError("require r_hi < box_length")
        if self.epsilon <= 0.0 or self.sigma <= 0.0:
            raise ValueError("epsilon and sigma must be positive")


class AtomBox:
    """Atom coordinates of one box; every component lies in [0, L)."""

    def __init__(self, coords):
        self.coords = np.asarray(coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError("coords must have shape (n_atoms, 3)")

    def __eq__(self, other):
        if not isinstance(other, AtomBox):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)

    def __repr__(self):
        return f"AtomBox(n={len(self.coords)})"


@dataclass
class TrainingCase:
    distances: list
    target_energy: float


@dataclass
class Dataset:
    spec: BoxSpec
    seed: int
    boxes: list
    cases: list = field(default_factory=list)


def min_image_distances(coords, pos, box_length):
    """Minimum-image distances from pos to each row of coords."""
    delta = coords - pos
    delta -= box_length * np.rint(delta / box_length)
    return np.sqrt((delta * delta).sum(axis=1))


def place_atoms(spec, rng, max_proposals=100_000):
    """Rejection-sample atom positions keeping all image distances >= d_min."""
    coords = np.empty((spec.n_atoms, 3))
    for i in range(spec.n_atoms):
        for _ in range(max_proposals):
            pos = rng.random(3) * spec.box_length
            if i == 0 or min_image_distances(coords[:i], pos, spec.box_length).min() >= spec.d_min:
                coords[i] = pos
                break
        else:
            raise InfeasibleBoxError(
                f"could not place atom {i} after {max_proposals} proposals"
            )
    return AtomBox(coords)


def pair_distances(box, spec, shell=1):
    """Distances of all (pair, image) interactions strictly inside the window.

    Enumerates image offsets in {-shell..shell}^3 for each unordered atom
    pair i < j.  shell=1 is exhaustive because r_hi < box_length.
    """
    if not spec.r_hi < spec.box_length:
        raise ValueError("single-shell image enumeration requires r_hi < box_length")
    offsets = spec.box_length * np.array(
        list(itertools.product(range(-shell, shell + 1), repeat=3)), dtype=np.float64
    )
    coords = box.coords
    n = len(coords)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            base = coords[i] - coords[j]
            d = np.sqrt(((base + offsets) ** 2).sum(axis=1))
            for x in d:
                if spec.r_lo < x < spec.r_hi:
                    out.append(float(x))
    return out


def lj_pair(r, spec=BoxSpec()):
    """Lennard-Jones pair energy 4*eps*((sigma/r)^12 - (sigma/r)^6)."""
    if r <= 0.0:
        raise ValueError("r must be positive")
    x = spec.sigma / r
    return 4.0 * spec.epsilon * (x ** 12 - x ** 6)


def box_energy(distances, spec=BoxSpec()):
    """Sum of lj_pair over the list, accumulated in list order."""
    e = 0.0
    for r in distances:
        e += lj_pair(r, spec)
    return e


def build_dataset(spec, k_box, seed):
    if k_box < 1:
        raise ValueError("k_box must be >= 1")
    rng = np.random.default_rng(seed)
    boxes = [place_atoms(spec, rng) for _ in range(k_box)]
    cases = []
    for box in boxes:
        dists = pair_distances(box, spec)
        cases.append(TrainingCase(dists, box_energy(dists, spec)))
    return Dataset(spec=spec, seed=seed, boxes=boxes, cases=cases)


def save(dataset, path):
    doc = {
        "spec": asdict(dataset.spec),
        "seed": dataset.seed,
        "boxes": [box.coords.tolist() for box in dataset.boxes],
        "cases": [
            {"distances": c.distances, "target_energy": c.target_energy}
            for c in dataset.cases
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"not valid JSON: {exc}") from exc
    for key in ("spec", "seed", "boxes", "cases"):
        if key not in doc:
            raise DatasetFormatError(f"missing top-level key {key!r}")
    try:
        spec = BoxSpec(**doc["spec"])
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"bad spec: {exc}") from exc
    boxes = [AtomBox(b) for b in doc["boxes"]]
    cases = []
    for c in doc["cases"]:
        if "distances" not in c or "target_energy" not in c:
            raise DatasetFormatError("case missing 'distances' or 'target_energy'")
        cases.append(TrainingCase([float(x) for x in c["distances"]],
                                  float(c["target_energy"])))
    if len(boxes) != len(cases) or not cases:
        raise DatasetFormatError("boxes and cases must be non-empty and aligned")
    return Dataset(spec=spec, seed=int(doc["seed"]), boxes=boxes, cases=cases)
