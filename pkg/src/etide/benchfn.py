"""Seeded shifted/rotated benchmark suite.

The suite mirrors the usual four-way split of real-parameter test beds
(unimodal, simple multimodal, hybrid, composition) on the box [-100, 100]^D.
Base formulas are textbook; suite members scale their input the CEC way, so that
e.g. the Rastrigin member sees ``z = 0.0512 * M (x - o)``.

Every function is vectorised: ``fn(x)`` accepts a single point of shape
``(D,)`` and returns a float, or a batch of shape ``(n, D)`` and returns an
array of shape ``(n,)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CATEGORIES = ("unimodal", "multimodal", "hybrid", "composition")

LOWER = -100.0
UPPER = 100.0
SHIFT_RANGE = 80.0

_SCHWEFEL_OFFSET = 4.209687462275036e02


# --------------------------------------------------------------------------
# base functions: z has shape (n, d), result has shape (n,)
# --------------------------------------------------------------------------

def sphere(z):
    return np.sum(z * z, axis=1)


def ellipsoid(z):
    d = z.shape[1]
    if d == 1:
        return z[:, 0] ** 2
    coef = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return (z * z) @ coef


def bent_cigar(z):
    return z[:, 0] ** 2 + 1e6 * np.sum(z[:, 1:] ** 2, axis=1)


def discus(z):
    return 1e6 * z[:, 0] ** 2 + np.sum(z[:, 1:] ** 2, axis=1)


def rosenbrock(z):
    # shifted by one so the minimum sits at the origin
    y = z + 1.0
    if y.shape[1] < 2:
        return (y[:, 0] - 1.0) ** 2
    a = y[:, :-1]
    b = y[:, 1:]
    return np.sum(100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2, axis=1)


def ackley(z):
    d = z.shape[1]
    # written as two non-negative terms so the optimum evaluates to exactly 0
    r = np.sqrt(np.sum(z * z, axis=1) / d)
    c = np.sum(np.cos(2.0 * np.pi * z), axis=1) / d
    return 20.0 * (1.0 - np.exp(-0.2 * r)) + (np.e - np.exp(c))


_W_A = 0.5 ** np.arange(21)
_W_B = 3.0 ** np.arange(21)


def weierstrass(z):
    y = z
    # a^k (cos(2 pi b^k (y + 0.5)) - cos(pi b^k)) is exactly 0 at y == 0
    arg = (2.0 * np.pi * _W_B) * (y[..., None] + 0.5)
    terms = _W_A * (np.cos(arg) - np.cos(np.pi * _W_B))
    return np.sum(terms, axis=(1, 2))


def griewank(z):
    y = z
    d = y.shape[1]
    s = np.sum(y * y, axis=1) / 4000.0
    p = np.prod(np.cos(y / np.sqrt(np.arange(1, d + 1))), axis=1)
    return 1.0 + s - p


def rastrigin(z):
    return np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z) + 10.0, axis=1)


def _schwefel_terms(y):
    """Per-coordinate modified Schwefel term, including the boundary penalty."""
    d = y.shape[1]
    a = np.abs(y)
    inside = -y * np.sin(np.sqrt(a))
    # outside [-500, 500] the coordinate is folded back and penalised
    m = 500.0 - np.fmod(a, 500.0)
    folded = -np.sign(y) * m * np.sin(np.sqrt(m)) + ((a - 500.0) / 100.0) ** 2 / d
    return np.where(a <= 500.0, inside, folded)


_SCHWEFEL_MIN = float(-_SCHWEFEL_OFFSET * np.sin(np.sqrt(_SCHWEFEL_OFFSET)))


def schwefel(z):
    y = z + _SCHWEFEL_OFFSET
    return np.sum(_schwefel_terms(y) - _SCHWEFEL_MIN, axis=1)


_K_POW = 2.0 ** np.arange(1, 33)


def katsuura(z):
    y = z
    d = y.shape[1]
    t = _K_POW * y[..., None]
    inner = np.sum(np.abs(t - np.floor(t + 0.5)) / _K_POW, axis=2)
    prod = np.prod((1.0 + np.arange(1, d + 1) * inner) ** (10.0 / d**1.2), axis=1)
    scale = 10.0 / d**2
    return scale * prod - scale


BASE_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sphere": sphere,
    "ellipsoid": ellipsoid,
    "bent_cigar": bent_cigar,
    "discus": discus,
    "rosenbrock": rosenbrock,
    "ackley": ackley,
    "weierstrass": weierstrass,
    "griewank": griewank,
    "rastrigin": rastrigin,
    "schwefel": schwefel,
    "katsuura": katsuura,
}

# CEC-style input scaling applied before the base formula; 1 when absent
INPUT_SCALE = {
    "rosenbrock": 2.048 / 100.0,
    "weierstrass": 0.5 / 100.0,
    "griewank": 600.0 / 100.0,
    "rastrigin": 5.12 / 100.0,
    "schwefel": 1000.0 / 100.0,
    "katsuura": 5.0 / 100.0,
}


def apply_base(name: str, z: np.ndarray, scale: float | None = None) -> np.ndarray:
    """``base(scale * z)``; ``scale`` defaults to the base's entry in ``INPUT_SCALE``."""
    if scale is None:
        scale = INPUT_SCALE.get(name, 1.0)
    return BASE_FUNCTIONS[name](z if scale == 1.0 else scale * z)


# --------------------------------------------------------------------------
# objective function objects
# --------------------------------------------------------------------------

def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return x, single


@dataclass(frozen=True, eq=False)
class ObjectiveFunction:
    """A shifted and rotated minimisation problem on a box.

    ``evaluate(x) = base(M (x - o)) + optimum_value``.  Subclasses change how
    the transformed point is fed to the base function(s).
    """

    id: str
    category: str
    base: str
    shift: np.ndarray
    rotation: np.ndarray
    optimum_value: float = 0.0
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)
    # None picks the base's default from INPUT_SCALE
    input_scale: float | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        shift = _frozen(self.shift)
        rot = _frozen(self.rotation)
        d = shift.shape[0]
        if rot.shape != (d, d):
            raise ValueError("rotation must be a D x D matrix")
        lower = _frozen(np.full(d, LOWER) if self.lower is None else self.lower)
        upper = _frozen(np.full(d, UPPER) if self.upper is None else self.upper)
        if lower.shape != (d,) or upper.shape != (d,) or np.any(lower >= upper):
            raise ValueError("bounds must satisfy lower < upper in every dimension")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return self.shift.shape[0]

    def _transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) @ self.rotation.T

    def _raw(self, z: np.ndarray) -> np.ndarray:
        return apply_base(self.base, z, self.input_scale)

    def evaluate(self, x):
        """Objective value at a point ``(D,)`` or for each row of ``(n, D)``."""
        batch, single = _as_batch(x, self.dimension)
        values = self._raw(self._transform(batch)) + self.optimum_value
        return float(values[0]) if single else values

    __call__ = evaluate

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "base": self.base,
            "dim": self.dimension,
            "optimum_value": self.optimum_value,
        }


@dataclass(frozen=True, eq=False)
class HybridFunction(ObjectiveFunction):
    """Rotated point is permuted and split into groups, one base function each."""

    parts: tuple[str, ...] = ()
    proportions: tuple[float, ...] = ()
    permutation: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        if len(self.parts) != len(self.proportions) or not self.parts:
            raise ValueError("hybrid needs one proportion per part")
        d = self.dimension
        perm = np.arange(d) if self.permutation is None else np.asarray(self.permutation)
        if sorted(perm.tolist()) != list(range(d)):
            raise ValueError("permutation must be a permutation of range(D)")
        perm = perm.astype(np.intp)
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)

    def groups(self) -> list[np.ndarray]:
        d = self.dimension
        sizes = [int(np.ceil(p * d)) for p in self.proportions[:-1]]
        cuts, start = [], 0
        for s in sizes:
            s = min(s, d - start)
            cuts.append(self.permutation[start:start + s])
            start += s
        cuts.append(self.permutation[start:])
        return cuts

    def _raw(self, z):
        total = np.zeros(z.shape[0])
        for name, idx in zip(self.parts, self.groups()):
            if idx.size:
                total += apply_base(name, z[:, idx])
        return total

    def manifest(self):
        out = super().manifest()
        out["parts"] = list(self.parts)
        out["proportions"] = list(self.proportions)
        return out


@dataclass(frozen=True)
class Component:
    base: str
    shift: np.ndarray
    rotation: np.ndarray
    sigma: float
    scale: float
    bias: float


@dataclass(frozen=True, eq=False)
class CompositionFunction(ObjectiveFunction):
    """Weighted blend of shifted/rotated base functions.

    Component weights are inverse-distance with a Gaussian fall-off,
    ``w_i = exp(-d_i^2 / (2 D sigma_i^2)) / d_i`` where ``d_i = |x - o_i|``.
    A point exactly on some ``o_i`` gets that component alone.  The first
    component carries bias 0 and defines ``shift``/``rotation``.
    """

    components: tuple[Component, ...] = ()

    def _transform(self, x):
        return x

    def _raw(self, x):
        d = self.dimension
        n = x.shape[0]
        k = len(self.components)
        values = np.empty((n, k))
        dist2 = np.empty((n, k))
        for c, comp in enumerate(self.components):
            diff = x - comp.shift
            dist2[:, c] = np.sum(diff * diff, axis=1)
            g = apply_base(comp.base, diff @ comp.rotation.T)
            values[:, c] = comp.scale * g + comp.bias
        sigma = np.array([c.sigma for c in self.components])
        with np.errstate(divide="ignore"):
            w = np.exp(-dist2 / (2.0 * d * sigma**2)) / np.sqrt(dist2)
        hit = dist2 == 0.0
        rows = hit.any(axis=1)
        w[rows] = hit[rows].astype(float)
        # far from every optimum all weights can underflow; fall back to uniform
        wsum = w.sum(axis=1)
        zero = wsum == 0.0
        w[zero] = 1.0
        wsum[zero] = k
        return np.sum(w * values, axis=1) / wsum

    def manifest(self):
        out = super().manifest()
        out["parts"] = [c.base for c in self.components]
        out["sigma"] = [c.sigma for c in self.components]
        out["bias"] = [c.bias for c in self.components]
        return out


def evaluate(fn: ObjectiveFunction, x):
    return fn.evaluate(x)


# --------------------------------------------------------------------------
# suite construction
# --------------------------------------------------------------------------

def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR factors of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_shift(dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-SHIFT_RANGE, SHIFT_RANGE, dim)


# (id, category, base, rotated)
_SIMPLE = [
    ("sphere", "unimodal", "sphere", False),
    ("ellipsoid", "unimodal", "ellipsoid", True),
    ("bent_cigar", "unimodal", "bent_cigar", True),
    ("discus", "unimodal", "discus", True),
    ("rosenbrock", "multimodal", "rosenbrock", True),
    ("ackley", "multimodal", "ackley", True),
    ("weierstrass", "multimodal", "weierstrass", True),
    ("griewank", "multimodal", "griewank", True),
    ("rastrigin", "multimodal", "rastrigin", False),
    ("rastrigin_rot", "multimodal", "rastrigin", True),
    ("schwefel", "multimodal", "schwefel", False),
    ("schwefel_rot", "multimodal", "schwefel", True),
    ("katsuura", "multimodal", "katsuura", True),
]

_HYBRID = [
    ("hybrid1", ("schwefel", "rastrigin", "ellipsoid"), (0.3, 0.3, 0.4)),
    ("hybrid2", ("bent_cigar", "rosenbrock", "rastrigin"), (0.3, 0.3, 0.4)),
    ("hybrid3", ("griewank", "weierstrass", "rosenbrock", "ackley"), (0.2, 0.2, 0.3, 0.3)),
]

# (id, [(base, sigma, scale, bias), ...])
_COMPOSITION = [
    (
        "composition1",
        [
            ("rosenbrock", 10.0, 1.0, 0.0),
            ("ellipsoid", 20.0, 1e-6, 100.0),
            ("bent_cigar", 30.0, 1e-26, 200.0),
            ("discus", 40.0, 1e-6, 300.0),
            ("ellipsoid", 50.0, 1e-6, 400.0),
        ],
    ),
    (
        "composition2",
        [
            ("schwefel", 20.0, 1.0, 0.0),
            ("rastrigin", 20.0, 1.0, 100.0),
            ("griewank", 20.0, 1.0, 200.0),
        ],
    ),
    (
        "composition3",
        [
            ("ackley", 10.0, 10.0, 0.0),
            ("weierstrass", 20.0, 10.0, 100.0),
            ("katsuura", 30.0, 2.5, 200.0),
            ("sphere", 40.0, 1e-4, 300.0),
        ],
    ),
]


def _function_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def make_suite(seed: int, dim: int) -> list[ObjectiveFunction]:
    """Build the 19-member suite; the same ``(seed, dim)`` gives identical data."""
    if int(dim) != dim or dim < 2:
        raise ValueError("suite dimension must be an integer >= 2")
    dim = int(dim)
    suite: list[ObjectiveFunction] = []
    index = 0

    for fid, category, base, rotated in _SIMPLE:
        rng = _function_rng(seed, index)
        shift = random_shift(dim, rng)
        rot = random_rotation(dim, rng) if rotated else np.eye(dim)
        suite.append(ObjectiveFunction(fid, category, base, shift, rot))
        index += 1

    for fid, parts, props in _HYBRID:
        rng = _function_rng(seed, index)
        shift = random_shift(dim, rng)
        rot = random_rotation(dim, rng)
        perm = rng.permutation(dim)
        suite.append(
            HybridFunction(fid, "hybrid", "hybrid", shift, rot,
                           parts=parts, proportions=props, permutation=perm)
        )
        index += 1

    for fid, parts in _COMPOSITION:
        rng = _function_rng(seed, index)
        comps = []
        for base, sigma, scale, bias in parts:
            shift = random_shift(dim, rng)
            rot = random_rotation(dim, rng)
            comps.append(Component(base, _frozen(shift), _frozen(rot), sigma, scale, bias))
        suite.append(
            CompositionFunction(fid, "composition", "composition",
                                comps[0].shift, comps[0].rotation, components=tuple(comps))
        )
        index += 1

    return suite


def get_function(seed: int, dim: int, fid: str) -> ObjectiveFunction:
    for fn in make_suite(seed, dim):
        if fn.id == fid:
            return fn
    raise KeyError(f"no function {fid!r} in the suite")


def suite_manifest(seed: int, dim: int, functions: Sequence[ObjectiveFunction] | None = None) -> dict:
    functions = make_suite(seed, dim) if functions is None else functions
    return {
        "seed": seed,
        "dim": dim,
        "functions": [fn.manifest() for fn in functions],
    }


def manifest_json(seed: int, dim: int) -> str:
    return json.dumps(suite_manifest(seed, dim), indent=2)
