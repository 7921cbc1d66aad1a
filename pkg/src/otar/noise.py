"""Random noise maps with identity mean, and the seeded stream layout.

Noise maps are finite mixtures ``sum_j w_j zeta_{K_j}`` of the sine-perturbed
maps ``zeta_K(x) = x - sin(pi K x) / (|K| pi)``. The integers ``K_j`` are drawn
i.i.d. from a law symmetric about zero, which makes ``E[T_eps(x)] = x``.

Random streams
--------------
All randomness comes from Philox (a counter-based 64-bit generator) keyed by
``SeedSequence(seed, spawn_key=keys)``. The keys identify the consumer:

* ``(replicate,)`` for a single chain or replicate,
* ``(cell, replicate)`` for a cell of an experiment grid,
* ``(n_index, replicate)`` for the rate study.

A stream therefore depends only on the seed and its keys, never on the order
in which parallel workers happen to run.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .transport import DEFAULT_M, UnitMap, grid

_MAX_LIPSCHITZ_COMBOS = 20_000


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``keys`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def zeta(k: int, x):
    """``zeta_k(x) = x - sin(pi k x) / (|k| pi)``, with ``zeta_0`` the identity."""
    xa = np.asarray(x, dtype=float)
    if k == 0:
        out = xa.copy()
    else:
        out = xa - np.sin(math.pi * k * xa) / (abs(k) * math.pi)
        out = np.where(xa == 1.0, 1.0, np.where(xa == 0.0, 0.0, out))
    return float(out) if out.ndim == 0 else out


def zeta_map(k: int, m: int = DEFAULT_M) -> UnitMap:
    return UnitMap.from_values(zeta(k, grid(m)))


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the noise maps.

    ``K`` equals 0 with probability ``include_identity_prob`` and is otherwise
    uniform on ``{-k_max, ..., -1, 1, ..., k_max}``; each of the
    ``n_components`` mixture components draws its own ``K``.
    """

    k_max: int = 4
    n_components: int = 2
    weights: tuple[float, ...] = (0.5, 0.5)
    include_identity_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.k_max < 1:
            raise ConfigError("k_max must be a positive integer")
        if self.n_components < 1:
            raise ConfigError("n_components must be a positive integer")
        if len(self.weights) != self.n_components:
            raise ConfigError(f"expected {self.n_components} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ConfigError("weights must be non-negative and sum to 1")
        if not 0.0 <= self.include_identity_prob <= 1.0:
            raise ConfigError("include_identity_prob must lie in [0, 1]")

    @classmethod
    def none(cls) -> "NoiseSpec":
        """Degenerate law: every noise map is the identity."""
        return cls(k_max=1, n_components=1, weights=(1.0,), include_identity_prob=1.0)

    @property
    def is_identity(self) -> bool:
        return self.include_identity_prob == 1.0

    def law(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of ``K`` (zero-probability atoms dropped)."""
        ks = np.arange(-self.k_max, self.k_max + 1)
        p_nonzero = (1.0 - self.include_identity_prob) / (2 * self.k_max)
        probs = np.where(ks == 0, self.include_identity_prob, p_nonzero)
        keep = probs > 0
        return ks[keep], probs[keep]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        try:
            return cls(k_max=int(data["k_max"]), n_components=int(data["n_components"]),
                       weights=tuple(data["weights"]),
                       include_identity_prob=float(data.get("include_identity_prob", 0.0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad noise spec: {exc}") from exc

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "NoiseSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def exact_mean(spec: NoiseSpec, x) -> np.ndarray:
    """``sum_k P(K = k) zeta_k(x)``, computed from the discrete law (no sampling)."""
    ks, probs = spec.law()
    return sum(p * zeta(int(k), x) for k, p in zip(ks, probs))


def _draw_ks(spec: NoiseSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    shape = (size, spec.n_components)
    is_zero = rng.random(shape) < spec.include_identity_prob
    mag = rng.integers(1, spec.k_max + 1, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1, 1)
    return np.where(is_zero, 0, sign * mag)


@dataclass
class _ZetaTable:
    k_max: int
    m: int
    rows: np.ndarray = field(init=False)

    def __post_init__(self):
        x = grid(self.m)
        self.rows = np.stack([zeta(k, x) for k in range(-self.k_max, self.k_max + 1)])

    def lookup(self, ks: np.ndarray) -> np.ndarray:
        return self.rows[ks + self.k_max]


def sample_noise_values(spec: NoiseSpec, rng: np.random.Generator, m: int, size: int) -> np.ndarray:
    """``size`` noise maps as a ``(size, m + 1)`` array of grid samples."""
    ks = _draw_ks(spec, rng, size)
    table = _ZetaTable(spec.k_max, m)
    w = np.asarray(spec.weights)
    out = np.einsum("j,njm->nm", w, table.lookup(ks))
    out[:, 0] = 0.0
    out[:, -1] = 1.0
    return out


def sample_noise_map(spec: NoiseSpec, rng: np.random.Generator, m: int = DEFAULT_M) -> UnitMap:
    """One noise map ``T_eps`` with ``E[T_eps(x)] = x``."""
    return UnitMap(sample_noise_values(spec, rng, m, 1)[0])


def lipschitz_bound(spec: NoiseSpec) -> float:
    """A constant ``L_eps`` with ``E|T(x) - T(y)|^2 <= L_eps^2 |x - y|^2``.

    Uses the sup of the derivative ``sum_j w_j (1 - sign(k_j) cos(pi k_j x))``
    over every realizable draw. Each term lies in [0, 2], so 2 is returned
    outright when there are too many draws to enumerate.
    """
    ks, _ = spec.law()
    if ks.size == 1 and ks[0] == 0:
        return 1.0
    n_combos = ks.size ** spec.n_components
    if n_combos > _MAX_LIPSCHITZ_COMBOS:
        return 2.0
    x = np.linspace(0.0, 1.0, 4001)
    deriv = {int(k): (np.ones_like(x) if k == 0 else 1.0 - np.sign(k) * np.cos(math.pi * k * x))
             for k in ks}
    best = 0.0
    for combo in itertools.product(ks.tolist(), repeat=spec.n_components):
        d = sum(w * deriv[k] for w, k in zip(spec.weights, combo))
        best = max(best, float(d.max()))
    return min(max(best, 1.0), 2.0)
