"""Synthetic causal dataset families, treatment-flip families and dataset files.

Every generator returns a :class:`CausalDataset` carrying the full potential
outcome table, so PEHE and counterfactual losses are computable. Outcome
surfaces of each family are available in closed form through
:func:`mean_outcomes`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ._io import FLOAT_FORMAT, PathLike, array_hash, canonical_hash, dump_json, load_json
from .errors import ConfigError, DatasetError, DimensionError

logger = logging.getLogger(__name__)

IHDP_WIDTH = 25
IHDP_TREATED_RATE = 139 / 747
IHDP_BETA_SUPPORT = (0.0, 0.1, 0.2, 0.3, 0.4)
IHDP_SHIFT = 0.5

HEAT_K_GRID = tuple(float(k) for k in np.linspace(0.5, 2.0, 20))
MOVEMENT_MK_GRID = (
    (5.0, 1.0), (5.0, 5.0), (5.0, 10.0), (5.0, 20.0), (10.0, 5.0), (10.0, 10.0),
    (10.0, 20.0), (20.0, 5.0), (20.0, 10.0), (20.0, 20.0), (50.0, 10.0), (50.0, 20.0),
)
IHDP_SETTINGS = tuple(
    ((0.6 + i / 100, 0.1 - i / 100, 0.1, 0.1, 0.1), 4.0 + i / 10) for i in range(10)
)
FLIP_GRID = tuple(i / 10 for i in range(11))
JOBS_FLIP_GRID = tuple(i / 9 for i in range(10))
GRAVITY = 10.0

DEFAULT_SIZES = {"heat": 4000, "movement": 4000, "rkhs": 2000, "ihdp": 747, "surrogate": 747}


class Family(str, Enum):
    IHDP = "ihdp"
    RKHS = "rkhs"
    HEAT = "heat"
    MOVEMENT = "movement"
    SURROGATE = "surrogate"


class OutcomeKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


@dataclass(frozen=True)
class DatasetMeta:
    family: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    M: int = 1
    outcome: OutcomeKind = OutcomeKind.CONTINUOUS

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcome", OutcomeKind(self.outcome))
        object.__setattr__(self, "params", dict(self.params))
        if int(self.M) < 1:
            raise DatasetError(f"M must be at least 1, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "seed": self.seed,
                "M": self.M, "outcome": self.outcome.value}

    def updated(self, **params: Any) -> "DatasetMeta":
        return replace(self, params={**self.params, **params})


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CausalDataset:
    """Covariates ``x`` (n x d), labels ``a`` in {0..M}, factual outcomes ``y``
    and an optional n x (M+1) potential outcome table."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    potential: Optional[np.ndarray] = None
    meta: DatasetMeta = field(default_factory=lambda: DatasetMeta("external"))

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        a_raw = np.asarray(self.a)
        if a_raw.size and not np.all(np.equal(np.mod(a_raw, 1), 0)):
            raise DatasetError("treatment labels must be integers")
        a = a_raw.astype(np.int64)
        y = np.asarray(self.y, dtype=np.float64)
        n = x.shape[0]
        if x.ndim != 2 or n < 1:
            raise DatasetError(f"covariates need shape (n >= 1, d), got {x.shape}")
        if a.shape != (n,) or y.shape != (n,):
            raise DatasetError(f"row-length mismatch: x has {n} rows, a {a.shape}, y {y.shape}")
        M = self.meta.M
        if np.any(a < 0) or np.any(a > M):
            raise DatasetError(f"label out of range: labels must lie in 0..{M}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DatasetError("non-finite covariates or outcomes")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "y", _frozen(y))
        if self.potential is not None:
            pot = np.asarray(self.potential, dtype=np.float64)
            if pot.shape != (n, M + 1):
                raise DatasetError(f"row-length mismatch: potential table {pot.shape} != {(n, M + 1)}")
            if not np.all(np.isfinite(pot)):
                raise DatasetError("non-finite potential outcomes")
            object.__setattr__(self, "potential", _frozen(pot))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def M(self) -> int:
        return self.meta.M

    @property
    def has_potentials(self) -> bool:
        return self.potential is not None

    @property
    def group_counts(self) -> np.ndarray:
        return np.bincount(self.a, minlength=self.M + 1)

    @property
    def treated_fraction(self) -> float:
        return float(np.mean(self.a == 1))

    @property
    def both_groups(self) -> bool:
        return bool(np.all(self.group_counts > 0))

    @property
    def dataset_id(self) -> str:
        arrays = [self.x, self.a, self.y] + ([self.potential] if self.has_potentials else [])
        return f"{self.meta.family}-{array_hash(*arrays, length=10)}{canonical_hash(self.meta.to_dict(), 6)}"

    def subset(self, idx: Sequence[int]) -> "CausalDataset":
        idx = np.asarray(idx, dtype=np.int64)
        pot = None if self.potential is None else self.potential[idx]
        return CausalDataset(self.x[idx], self.a[idx], self.y[idx], pot, self.meta)

    def with_labels(self, a: np.ndarray, **params: Any) -> "CausalDataset":
        """Same covariates, outcomes and potentials under new labels."""
        return CausalDataset(self.x, a, self.y, self.potential, self.meta.updated(**params) if params else self.meta)

    def permute_labels(self, sigma: Sequence[int]) -> "CausalDataset":
        sigma = np.asarray(sigma, dtype=np.int64)
        if sorted(sigma.tolist()) != list(range(self.M + 1)):
            raise DatasetError(f"{sigma.tolist()} is not a permutation of 0..{self.M}")
        return self.with_labels(sigma[self.a])

    def equals(self, other: "CausalDataset") -> bool:
        same_pot = (self.potential is None and other.potential is None) or (
            self.potential is not None and other.potential is not None
            and np.array_equal(self.potential, other.potential)
        )
        return (
            np.array_equal(self.x, other.x) and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y) and same_pot
            and self.meta.to_dict() == other.meta.to_dict()
        )


def _factual(potential: np.ndarray, a: np.ndarray) -> np.ndarray:
    return potential[np.arange(a.shape[0]), a]


def _ensure_both_groups(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # overlap: never emit a single-group assignment
    if a.shape[0] >= 2 and (a.min() == a.max()):
        a = a.copy()
        a[rng.integers(a.shape[0])] = 1 - a[0]
    return a


def chi_squared(rng: np.random.Generator, dof: int, size: int) -> np.ndarray:
    """χ²(dof) draws as sums of squared standard normals."""
    return np.sum(rng.standard_normal((size, dof)) ** 2, axis=1)


# Closed-form outcome surfaces


def heat_outcomes(u: np.ndarray, k: float) -> Tuple[np.ndarray, np.ndarray]:
    decay = np.exp(-k * np.asarray(u, dtype=np.float64))
    return decay, np.maximum((95.0 * decay - 20.0) / 75.0, 0.0)


def movement_outcomes(u: np.ndarray, m: float, k: float) -> Tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64)
    c = k / m
    return GRAVITY * (1.0 - np.exp(-u)), (GRAVITY / c) * (1.0 - np.exp(-c * u))


def ihdp_means(x: np.ndarray, beta: np.ndarray, omega: float) -> Tuple[np.ndarray, np.ndarray]:
    lin = (np.asarray(x, dtype=np.float64) + IHDP_SHIFT) @ np.asarray(beta, dtype=np.float64)
    return np.exp(lin), lin - omega


def rbf_sum(x: np.ndarray, centers: np.ndarray, bandwidth: float = 1.0) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, np.asarray(x).shape[1])
    if centers.shape[0] == 0:
        return np.zeros(np.asarray(x).shape[0])
    sq = np.sum((np.asarray(x)[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.exp(-sq / (2.0 * bandwidth**2)).sum(axis=1)


def mean_outcomes(meta: DatasetMeta, x: np.ndarray) -> np.ndarray:
    """Noise-free outcome surfaces f(x, a) as an n x (M+1) matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    p = meta.params
    if meta.family == Family.HEAT.value:
        f0, f1 = heat_outcomes(x[:, 0], p["k"])
    elif meta.family == Family.MOVEMENT.value:
        f0, f1 = movement_outcomes(x[:, 0], p["m"], p["k"])
    elif meta.family in (Family.IHDP.value, Family.SURROGATE.value):
        f0, f1 = ihdp_means(x, p["beta"], p["omega"])
    elif meta.family == Family.RKHS.value:
        h = p.get("bandwidth", 1.0)
        f0, f1 = rbf_sum(x, p["centers0"], h), rbf_sum(x, p["centers1"], h)
    else:
        raise ConfigError(f"no closed-form outcome surfaces for family {meta.family!r}")
    return np.column_stack([f0, f1])


# Generators


class Covariates(NamedTuple):
    x: np.ndarray
    a: np.ndarray


def gen_surrogate(n: int = 747, seed: int = 0) -> Covariates:
    """Standard-normal n x 25 covariates with Bernoulli(139/747) assignment."""
    if n < 2:
        raise ConfigError(f"surrogate covariates need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, IHDP_WIDTH))
    a = (rng.random(n) < IHDP_TREATED_RATE).astype(np.int64)
    return Covariates(x, _ensure_both_groups(a, rng))


def load_ihdp_covariates(path: PathLike) -> Covariates:
    """Read real IHDP covariates: a header row with 25 ``x*`` columns and an
    optional ``treatment`` column."""
    frame = pd.read_csv(path)
    cols = [c for c in frame.columns if str(c).startswith("x")]
    if len(cols) != IHDP_WIDTH:
        raise DimensionError(f"wrong covariate width: expected {IHDP_WIDTH} x-columns, found {len(cols)}")
    a = frame["treatment"].to_numpy(dtype=np.int64) if "treatment" in frame.columns else None
    return Covariates(frame[cols].to_numpy(dtype=np.float64), a)


def _check_mu(mu: Sequence[float]) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (len(IHDP_BETA_SUPPORT),) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ConfigError(f"invalid mu {mu.tolist()}: need 5 nonnegative probabilities summing to 1")
    return mu


def gen_ihdp(
    covariates: np.ndarray,
    mu: Sequence[float],
    omega: float,
    seed: int,
    treatment: Optional[np.ndarray] = None,
    *,
    family: str = Family.IHDP.value,
) -> CausalDataset:
    """IHDP response surface: Y0 ~ N(exp(β·(x+W)), 1), Y1 ~ N(β·(x+W) − ω, 1)."""
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != IHDP_WIDTH:
        raise DimensionError(f"wrong covariate width: expected n x {IHDP_WIDTH}, got {x.shape}")
    mu = _check_mu(mu)
    rng = np.random.default_rng(seed)
    beta = rng.choice(np.asarray(IHDP_BETA_SUPPORT), size=IHDP_WIDTH, p=mu)
    f0, f1 = ihdp_means(x, beta, omega)
    potential = np.column_stack([f0 + rng.standard_normal(x.shape[0]), f1 + rng.standard_normal(x.shape[0])])
    if treatment is None:
        a = _ensure_both_groups((rng.random(x.shape[0]) < IHDP_TREATED_RATE).astype(np.int64), rng)
    else:
        a = np.asarray(treatment, dtype=np.int64)
        if a.shape != (x.shape[0],):
            raise DimensionError("treatment vector does not match covariate rows")
    meta = DatasetMeta(family, {"mu": mu.tolist(), "omega": float(omega), "beta": beta.tolist()}, seed)
    return CausalDataset(x, a, _factual(potential, a), potential, meta)


def gen_rkhs(seed: int, n: int = 2000, bandwidth: float = 1.0) -> CausalDataset:
    """RBF-kernel potential outcome functions on 4-D Gaussian populations."""
    if n < 2:
        raise ConfigError(f"rkhs needs n >= 2, got {n}")
    if not bandwidth > 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(seed)
    e = np.ones(4)
    mu1 = rng.normal(e, 1.0)
    mu0 = rng.normal(-e, 1.0)
    gamma0 = rng.normal(7.0 * e, 1.0)
    gamma1 = rng.normal(9.0 * e, 1.0)
    lam = int(rng.integers(10, 101))
    centers = []
    for gamma in (gamma0, gamma1):
        m_j = int(rng.poisson(lam))
        centers.append(rng.normal(gamma, 1.0, size=(m_j, 4)))

    n0 = n // 2
    x = np.vstack([rng.normal(mu0, 1.0, size=(n0, 4)), rng.normal(mu1, 1.0, size=(n - n0, 4))])
    a = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
    order = rng.permutation(n)
    x, a = x[order], a[order]
    potential = np.column_stack([rbf_sum(x, centers[0], bandwidth), rbf_sum(x, centers[1], bandwidth)])
    params = {"lambda": lam, "bandwidth": float(bandwidth), "mu0": mu0.tolist(), "mu1": mu1.tolist(),
              "centers0": centers[0].tolist(), "centers1": centers[1].tolist()}
    return CausalDataset(x, a, _factual(potential, a), potential, DatasetMeta(Family.RKHS.value, params, seed))


def _two_arm_times(rng: np.random.Generator, n: int, dof_control: int, dof_treated: int):
    half = n // 2
    u = np.concatenate([chi_squared(rng, dof_control, half), chi_squared(rng, dof_treated, n - half)])
    a = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    order = rng.permutation(n)
    return u[order], a[order]


def gen_heat(k: float, n: int = 4000, seed: int = 0) -> CausalDataset:
    """Newton cooling: treated rooms at 5 degrees, control at 25; covariate is the touch time."""
    if not k > 0:
        raise ConfigError(f"heat decay constant must be positive, got {k}")
    if n < 2 or n % 2:
        raise ConfigError(f"heat needs an even n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    u, a = _two_arm_times(rng, n, dof_control=2, dof_treated=5)
    potential = np.column_stack(heat_outcomes(u, k))
    return CausalDataset(u[:, None], a, _factual(potential, a), potential,
                         DatasetMeta(Family.HEAT.value, {"k": float(k)}, seed))


def gen_movement(m: float, k: float, n: int = 4000, seed: int = 0) -> CausalDataset:
    """Falling object with drag C = k/m under treatment; control has C = 1."""
    if not (m > 0 and k > 0):
        raise ConfigError(f"movement needs positive m and k, got m={m}, k={k}")
    if n < 2:
        raise ConfigError(f"movement needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    u, a = _two_arm_times(rng, n, dof_control=5, dof_treated=2)
    potential = np.column_stack(movement_outcomes(u, m, k))
    return CausalDataset(u[:, None], a, _factual(potential, a), potential,
                         DatasetMeta(Family.MOVEMENT.value, {"m": float(m), "k": float(k)}, seed))


# Label families


def flip_treatments(ds: CausalDataset, p: float, seed: int) -> CausalDataset:
    """Flip each binary label independently with probability ``p``.

    Covariates, factual outcomes and potentials are kept, so the result is a
    different task rather than a relabelled copy of the same one.
    """
    if ds.M != 1:
        raise ConfigError(f"treatment flips need binary labels, got M={ds.M}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"flip probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    mask = rng.random(ds.n) < p
    return ds.with_labels(np.where(mask, 1 - ds.a, ds.a), flip_p=float(p), flip_seed=int(seed))


def flip_family(ds: CausalDataset, grid: Sequence[float] = FLIP_GRID, seed: int = 0) -> List[CausalDataset]:
    return [flip_treatments(ds, p, seed + i) for i, p in enumerate(grid)]


def reassign_bernoulli(ds: CausalDataset, q: float, seed: int) -> CausalDataset:
    """Draw fresh Bernoulli(q) labels and read the factual outcome off the potential table."""
    if not ds.has_potentials or ds.M != 1:
        raise DatasetError("Bernoulli reassignment needs a binary potential outcome table")
    if not 0.0 < q < 1.0:
        raise ConfigError(f"assignment probability must lie in (0, 1), got {q}")
    rng = np.random.default_rng(seed)
    a = _ensure_both_groups((rng.random(ds.n) < q).astype(np.int64), rng)
    return CausalDataset(ds.x, a, _factual(ds.potential, a), ds.potential,
                         ds.meta.updated(assign_q=float(q), assign_seed=int(seed)))


def flip_potential_columns(ds: CausalDataset) -> CausalDataset:
    if not ds.has_potentials:
        raise DatasetError("dataset has no potential outcome table")
    return CausalDataset(ds.x, ds.a, ds.y, ds.potential[:, ::-1], ds.meta)


def counterfactual_view(ds: CausalDataset) -> CausalDataset:
    """The same units observed in the parallel universe: labels 1 - a with the
    matching potential outcomes as factual outcomes."""
    if not ds.has_potentials or ds.M != 1:
        raise DatasetError("counterfactual view needs a binary potential outcome table")
    a = 1 - ds.a
    return CausalDataset(ds.x, a, _factual(ds.potential, a), ds.potential, ds.meta.updated(counterfactual=True))


def concat_datasets(parts: Sequence[CausalDataset], family: str = "bundle") -> CausalDataset:
    if not parts:
        raise DatasetError("nothing to concatenate")
    d, M = parts[0].d, parts[0].M
    for ds in parts:
        if ds.d != d:
            raise DimensionError(f"covariate width mismatch in bundle: {ds.d} vs {d}")
        if ds.M != M:
            raise DatasetError(f"label range mismatch in bundle: M={ds.M} vs {M}")
    pot = None
    if all(ds.has_potentials for ds in parts):
        pot = np.vstack([ds.potential for ds in parts])
    meta = DatasetMeta(family, {"parts": [ds.dataset_id for ds in parts]}, None, M, parts[0].meta.outcome)
    return CausalDataset(
        np.vstack([ds.x for ds in parts]),
        np.concatenate([ds.a for ds in parts]),
        np.concatenate([ds.y for ds in parts]),
        pot,
        meta,
    )


def nested_subsets(ds: CausalDataset, sizes: Sequence[int], seed: int) -> List[CausalDataset]:
    """Subsets of increasing size where each is a prefix of the next."""
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError(f"sizes must be strictly ascending, got {sizes}")
    if sizes and (sizes[0] < 1 or sizes[-1] > ds.n):
        raise ConfigError(f"sizes must lie in 1..{ds.n}, got {sizes}")
    order = np.random.default_rng(seed).permutation(ds.n)
    return [ds.subset(order[:s]) for s in sizes]


# Config-driven generation


@dataclass(frozen=True)
class GeneratorConfig:
    family: Family
    params: Mapping[str, Any] = field(default_factory=dict)
    n: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", dict(self.params))
        p = self.params
        if family is Family.HEAT:
            if not p.get("k", 0) > 0:
                raise ConfigError("heat needs k > 0")
            if self.size % 2:
                raise ConfigError("heat needs an even sample count")
        elif family is Family.MOVEMENT:
            if not (p.get("m", 0) > 0 and p.get("k", 0) > 0):
                raise ConfigError("movement needs m > 0 and k > 0")
        elif family in (Family.IHDP, Family.SURROGATE):
            _check_mu(p.get("mu", IHDP_SETTINGS[0][0]))
            if family is Family.IHDP and "covariates_path" not in p:
                raise ConfigError("ihdp needs params.covariates_path (use family 'surrogate' without real covariates)")
        elif family is Family.RKHS:
            if not p.get("bandwidth", 1.0) > 0:
                raise ConfigError("rkhs bandwidth must be positive")
        if self.size < 2:
            raise ConfigError(f"sample count must be at least 2, got {self.size}")

    @property
    def size(self) -> int:
        return int(self.n) if self.n is not None else DEFAULT_SIZES[self.family.value]

    @property
    def label(self) -> str:
        keys = {"heat": ("k",), "movement": ("m", "k"), "rkhs": (), "ihdp": ("omega",), "surrogate": ("omega",)}
        parts = [f"{key}={self.params[key]:g}" for key in keys[self.family.value] if key in self.params]
        return "-".join([self.family.value] + parts + [f"s{self.seed}"])

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": self.params, "n": self.n, "seed": self.seed}


def generate(config: GeneratorConfig) -> CausalDataset:
    p = config.params
    fam = config.family
    if fam is Family.HEAT:
        return gen_heat(p["k"], config.size, config.seed)
    if fam is Family.MOVEMENT:
        return gen_movement(p["m"], p["k"], config.size, config.seed)
    if fam is Family.RKHS:
        return gen_rkhs(config.seed, config.size, p.get("bandwidth", 1.0))
    mu = p.get("mu", IHDP_SETTINGS[0][0])
    omega = p.get("omega", IHDP_SETTINGS[0][1])
    if fam is Family.IHDP:
        cov = load_ihdp_covariates(p["covariates_path"])
        return gen_ihdp(cov.x, mu, omega, config.seed, cov.a)
    # covariates share the base seed so every surrogate task sees the same units
    cov = gen_surrogate(config.size, p.get("covariate_seed", 0))
    return gen_ihdp(cov.x, mu, omega, config.seed, cov.a, family=Family.SURROGATE.value)


def family_tasks(family: str, n: Optional[int] = None, seed: int = 0, **extra: Any) -> List[GeneratorConfig]:
    """GeneratorConfigs of a whole family; the base task comes first."""
    fam = Family(family)
    if fam is Family.HEAT:
        return [GeneratorConfig(fam, {"k": k, **extra}, n, seed) for k in HEAT_K_GRID]
    if fam is Family.MOVEMENT:
        return [GeneratorConfig(fam, {"m": m, "k": k, **extra}, n, seed) for m, k in MOVEMENT_MK_GRID]
    if fam is Family.RKHS:
        count = int(extra.pop("count", 100))
        return [GeneratorConfig(fam, dict(extra), n, seed + i) for i in range(count)]
    return [GeneratorConfig(fam, {"mu": list(mu), "omega": omega, **extra}, n, seed + i)
            for i, (mu, omega) in enumerate(IHDP_SETTINGS)]


# Files


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_dataset(ds: CausalDataset, path: PathLike) -> Path:
    """CSV with columns x0..x{d-1}, a, y[, y0..yM] plus a ``.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(ds.x, columns=[f"x{j}" for j in range(ds.d)])
    frame["a"] = ds.a
    frame["y"] = ds.y
    if ds.has_potentials:
        for j in range(ds.M + 1):
            frame[f"y{j}"] = ds.potential[:, j]
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    dump_json({**ds.meta.to_dict(), "n": ds.n, "d": ds.d}, _sidecar(path))
    return path


def load_dataset(path: PathLike) -> CausalDataset:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetError(f"malformed dataset file {path}: {exc}") from exc

    sidecar = _sidecar(path)
    info = load_json(sidecar) if sidecar.exists() else {}
    x_cols = [c for c in frame.columns if c.startswith("x")]
    if not x_cols or x_cols != [f"x{j}" for j in range(len(x_cols))] or "a" not in frame or "y" not in frame:
        raise DatasetError(f"malformed dataset file {path}: expected columns x0..x{{d-1}}, a, y")
    pot_cols = [c for c in frame.columns if c not in x_cols and c not in ("a", "y")]
    if frame.isna().any().any():
        raise DatasetError(f"row-length mismatch in {path}")

    M = int(info.get("M", max(len(pot_cols) - 1, 1, int(frame["a"].max()))))
    if pot_cols and pot_cols != [f"y{j}" for j in range(M + 1)]:
        raise DatasetError(f"malformed dataset file {path}: potential columns {pot_cols} do not match M={M}")
    if "n" in info and int(info["n"]) != len(frame):
        raise DatasetError(f"row-length mismatch: sidecar says n={info['n']}, file has {len(frame)} rows")
    a = frame["a"].to_numpy()
    if np.any(a < 0) or np.any(a > M):
        raise DatasetError(f"label out of range in {path}: labels must lie in 0..{M}")

    meta = DatasetMeta(info.get("family", "external"), info.get("params", {}), info.get("seed"), M,
                       info.get("outcome", OutcomeKind.CONTINUOUS.value))
    pot = frame[pot_cols].to_numpy(dtype=np.float64) if pot_cols else None
    return CausalDataset(frame[x_cols].to_numpy(dtype=np.float64), a, frame["y"].to_numpy(dtype=np.float64), pot, meta)


def load_factual_csv(
    path: PathLike,
    treatment: str = "treatment",
    outcome: str = "y",
    covariates: Optional[Sequence[str]] = None,
    outcome_kind: str = OutcomeKind.CONTINUOUS.value,
) -> CausalDataset:
    """Factual-only observational data (no counterfactuals), e.g. Twins or Jobs exports."""
    frame = pd.read_csv(path)
    missing = [c for c in (treatment, outcome) if c not in frame.columns]
    if missing:
        raise DatasetError(f"missing columns {missing} in {path}")
    cols = list(covariates) if covariates is not None else [c for c in frame.columns if c not in (treatment, outcome)]
    frame = frame.dropna(subset=cols + [treatment, outcome])
    a = frame[treatment].to_numpy(dtype=np.int64)
    meta = DatasetMeta("external", {"source": str(path)}, None, max(int(a.max()), 1), outcome_kind)
    return CausalDataset(frame[cols].to_numpy(dtype=np.float64), a, frame[outcome].to_numpy(dtype=np.float64), None, meta)
