"""Finite spaces of homogeneous type: certification and builders.

A finite space of homogeneous type is a point set with a symmetric
quasimetric matrix and strictly positive point masses.  Both structural
constants (the quasimetric constant and the doubling constant of the
measure) are certified by exact finite maximization, not assumed.

Balls are open throughout: B(x, r) = { y : rho(x, y) < r }.  Doubling is
checked over the realized-distance set plus its doublings, which turns
the continuum doubling condition into an exact finite computation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymmetricMatrix, NegativeDistance, ZeroOffDiagonal

__all__ = [
    "FiniteSHT",
    "Ball",
    "certify_quasimetric",
    "certify_doubling",
    "build_interval_space",
    "build_cantor_space",
    "build_random_graph_space",
    "snowflake_space",
    "space_from_arrays",
    "ball",
]


def _validated_rho(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {rho.shape}")
    if not np.array_equal(rho, rho.T):
        raise AsymmetricMatrix("distance matrix is not symmetric")
    if np.any(rho < 0.0):
        raise NegativeDistance("distance matrix has a negative entry")
    if np.any(np.diag(rho) != 0.0):
        raise ValueError("distance matrix has a nonzero diagonal entry")
    off = rho + np.eye(rho.shape[0])
    if np.any(off == 0.0):
        i, j = np.argwhere(off == 0.0)[0]
        raise ZeroOffDiagonal(f"distinct points {i} and {j} are at distance 0")
    return rho


def certify_quasimetric(rho) -> float:
    """Smallest kappa with rho(x,z) <= kappa*(rho(x,y)+rho(y,z)) over all triples.

    The maximum of the triple ratios is attained (the matrix is finite), so
    the returned constant is exact up to float rounding.  Always >= 1.
    """
    rho = _validated_rho(rho)
    n = rho.shape[0]
    if n == 1:
        return 1.0
    best = 0.0
    for y in range(n):
        denom = rho[:, y][:, None] + rho[y, :][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(denom > 0.0, rho / denom, 0.0)
        best = max(best, float(ratio.max()))
    return max(best, 1.0)


def certify_doubling(rho, mu) -> float:
    """Exact doubling constant of the point masses over realized radii.

    D = max over points x and radii r of mu(B(x,2r)) / mu(B(x,r)), where r
    ranges over all realized positive distances and their doublings.
    """
    rho = np.asarray(rho, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n = rho.shape[0]
    if n == 1:
        return 1.0
    pos = rho[rho > 0.0]
    radii = np.unique(pos)
    radii = np.unique(np.concatenate([radii, 2.0 * radii]))
    best = 1.0
    for x in range(n):
        order = np.argsort(rho[x], kind="stable")
        d = rho[x][order]
        cm = np.cumsum(mu[order])
        # open balls: strict-less count via side="left"; count >= 1 since d[0] = 0
        m_r = cm[np.searchsorted(d, radii, side="left") - 1]
        m_2r = cm[np.searchsorted(d, 2.0 * radii, side="left") - 1]
        best = max(best, float((m_2r / m_r).max()))
    return best


@dataclass(frozen=True)
class FiniteSHT:
    """A finite quasimetric measure space with certified constants.

    Immutable after construction; safe for concurrent readers.  ``coords``
    holds 1D embedding coordinates when the space was built from a line
    (interval, Cantor, snowflake builders) and is None otherwise.
    """

    points: tuple[str, ...]
    rho: np.ndarray
    mu: np.ndarray
    kappa: float
    D_mu: float
    coords: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return float(self.mu.sum())

    @property
    def diameter(self) -> float:
        return float(self.rho.max())

    @property
    def min_distance(self) -> float:
        if self.n == 1:
            return 0.0
        off = self.rho[self.rho > 0.0]
        return float(off.min())

    def ball_mask(self, center: int, radius: float) -> np.ndarray:
        """Boolean membership mask of the open ball B(center, radius)."""
        return self.rho[center] < radius

    def mu_ball(self, center: int, radius: float) -> float:
        return float(self.mu[self.ball_mask(center, radius)].sum())


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    members: np.ndarray


def ball(space: FiniteSHT, center: int, radius: float) -> Ball:
    if radius <= 0.0:
        raise ValueError("ball radius must be positive")
    members = np.flatnonzero(space.ball_mask(center, radius))
    return Ball(center=center, radius=radius, members=members)


def space_from_arrays(points, rho, mu, coords=None) -> FiniteSHT:
    """Certify raw (points, rho, mu) data into a FiniteSHT."""
    points = tuple(str(p) for p in points)
    rho = _validated_rho(rho)
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (len(points),) or rho.shape[0] != len(points):
        raise ValueError("points, rho and mu sizes disagree")
    if np.any(~np.isfinite(mu)) or np.any(mu <= 0.0):
        raise ValueError("every point mass must be finite and strictly positive")
    kappa = certify_quasimetric(rho)
    d_mu = certify_doubling(rho, mu)
    rho = rho.copy()
    mu = mu.copy()
    rho.setflags(write=False)
    mu.setflags(write=False)
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64).copy()
        coords.setflags(write=False)
    return FiniteSHT(points=points, rho=rho, mu=mu, kappa=kappa, D_mu=d_mu, coords=coords)


def build_interval_space(n: int) -> FiniteSHT:
    """Uniform grid { (k+1/2)/n : 0 <= k < n } in (0,1] with mass 1/n per point.

    The standard test bed for power-weight sweeps; the companion weight
    x^a is produced by :func:`sht.weights.power_weight`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    coords = (np.arange(n, dtype=np.float64) + 0.5) / n
    rho = np.abs(coords[:, None] - coords[None, :])
    mu = np.full(n, 1.0 / n)
    labels = [repr(float(c)) for c in coords]
    return space_from_arrays(labels, rho, mu, coords=coords)


def build_cantor_space(level: int) -> FiniteSHT:
    """Midpoints of the level-L intervals of the middle-thirds Cantor set.

    2^L points, Euclidean distances, the self-similar measure 2^{-L} per
    point.  The doubling constant stays bounded as L grows.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    m = 2**level
    mids = np.empty(m, dtype=np.float64)
    for code in range(m):
        left = 0.0
        scale = 1.0
        for bit_pos in range(level):
            scale /= 3.0
            bit = (code >> (level - 1 - bit_pos)) & 1
            if bit:
                left += 2.0 * scale
        mids[code] = left + scale / 2.0
    rho = np.abs(mids[:, None] - mids[None, :])
    mu = np.full(m, 2.0 ** (-level))
    labels = [repr(float(c)) for c in mids]
    return space_from_arrays(labels, rho, mu, coords=mids)


def snowflake_space(space: FiniteSHT, s: float) -> FiniteSHT:
    """Replace rho by rho**s (s > 0) and re-certify.

    For s > 1 on a metric space this produces a genuine quasimetric with
    kappa <= 2^(s-1) * kappa_old^s.
    """
    if s <= 0.0:
        raise ValueError("snowflake exponent must be positive")
    return space_from_arrays(space.points, space.rho**s, space.mu, coords=space.coords)


def build_random_graph_space(n: int, seed: int, extra_edge_prob: float | None = None) -> FiniteSHT:
    """Shortest-path metric of a random connected weighted graph.

    A random spanning tree guarantees connectivity; extra edges are added
    independently.  Edge weights and point masses are uniform in
    [0.5, 1.5].  Deterministic given (n, seed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    w = np.full((n, n), np.inf)
    np.fill_diagonal(w, 0.0)

    def connect(i: int, j: int) -> None:
        length = rng.uniform(0.5, 1.5)
        w[i, j] = min(w[i, j], length)
        w[j, i] = w[i, j]

    perm = rng.permutation(n)
    for idx in range(1, n):
        connect(perm[idx], perm[rng.integers(0, idx)])
    p_extra = extra_edge_prob if extra_edge_prob is not None else min(1.0, 2.0 / n)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_extra:
                connect(i, j)
    # Floyd-Warshall
    for k in range(n):
        w = np.minimum(w, w[:, k][:, None] + w[k, :][None, :])
    mu = rng.uniform(0.5, 1.5, size=n)
    labels = [f"v{i}" for i in range(n)]
    return space_from_arrays(labels, w, mu)


def default_grid_delta(space: FiniteSHT) -> float:
    """The canonical scale ratio 1/(8*kappa^3) used by the experiments."""
    return 1.0 / (8.0 * space.kappa**3)


def space_to_dict(space: FiniteSHT) -> dict:
    """Serializable form of a space (schema sht-space/1, lower-triangular rho)."""
    n = space.n
    rows = [[float(space.rho[i, j]) for j in range(i)] for i in range(n)]
    return {
        "schema": "sht-space/1",
        "points": list(space.points),
        "rho": rows,
        "mu": [float(v) for v in space.mu],
    }


def space_from_dict(data: dict) -> FiniteSHT:
    from .errors import FileFormatError

    if data.get("schema") != "sht-space/1":
        raise FileFormatError(f"expected schema sht-space/1, got {data.get('schema')!r}")
    points = data["points"]
    n = len(points)
    rows = data["rho"]
    if len(rows) != n or any(len(rows[i]) != i for i in range(n)):
        raise FileFormatError("rho must be lower-triangular: row i holds i entries")
    rho = np.zeros((n, n))
    for i in range(n):
        for j in range(i):
            rho[i, j] = rows[i][j]
            rho[j, i] = rows[i][j]
    mu = np.asarray(data["mu"], dtype=np.float64)
    if mu.shape != (n,):
        raise FileFormatError("mu must hold one mass per point")
    coords = None
    try:
        coords = np.asarray([float(p) for p in points])
    except (TypeError, ValueError):
        coords = None
    return space_from_arrays(points, rho, mu, coords=coords)
