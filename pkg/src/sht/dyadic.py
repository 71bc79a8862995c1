"""Dyadic grids on finite spaces: construction, verification, stopping-time
decompositions and sparse families.

Levels are indexed by integers k with scale delta^k, so k increases toward
finer levels: the coarsest level (one cube covering the space) sits at
``k_min`` and the finest (all singletons) at ``k_max``.  Children live one
level below their parent (parent at k-1, children at k+1).

Construction is deterministic: candidate centers are taken in a fixed
order (descending mass, ties by index), each refinement selects a
separated net among points whose delta^k-ball stays inside the parent
cube, and every point joins the nearest admissible center with ties
broken by net rank.  The structural constants epsilon (mass retention of
children) and C_sandwich (outer ball dilation) are certified a posteriori
from the built grid, never assumed.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeltaTooLarge, LambdaNonpositive, MixedGrids
from .space import FiniteSHT

__all__ = [
    "DyadicCube",
    "DyadicGrid",
    "SparseFamily",
    "build_grid",
    "verify_grid",
    "cz_decompose",
    "extract_sparse",
    "is_sparse",
    "subtree_max_integral",
]

_GRID_UID = itertools.count(1)


@dataclass(frozen=True)
class DyadicCube:
    id: int
    level: int
    members: np.ndarray
    mask: int
    center: int
    parent: int | None
    children: tuple[int, ...]
    mass: float


@dataclass(frozen=True)
class DyadicGrid:
    space: FiniteSHT
    delta: float
    cubes: tuple[DyadicCube, ...]
    levels: dict[int, tuple[int, ...]]
    k_min: int
    k_max: int
    epsilon: float
    C_sandwich: float
    leaf_of: np.ndarray
    uid: int = field(default_factory=lambda: next(_GRID_UID))

    @property
    def level_list(self) -> list[int]:
        return sorted(self.levels)

    @property
    def root_id(self) -> int:
        return self.levels[self.k_min][0]

    @property
    def n_cubes(self) -> int:
        return len(self.cubes)

    def averages(self, f) -> np.ndarray:
        """mu-average of f over every cube, indexed by cube id."""
        f = np.asarray(f, dtype=np.float64)
        fm = f * self.space.mu
        out = np.empty(len(self.cubes))
        for c in self.cubes:
            out[c.id] = fm[c.members].sum() / c.mass
        return out

    def cube_sum(self, f, cube_id: int) -> float:
        """Integral of f over one cube: sum of f*mu on its members."""
        c = self.cubes[cube_id]
        return float((np.asarray(f, dtype=np.float64)[c.members] * self.space.mu[c.members]).sum())

    def descendants(self, cube_id: int):
        """All cubes of the subtree rooted at cube_id, DFS preorder."""
        stack = [cube_id]
        while stack:
            cid = stack.pop()
            yield cid
            stack.extend(self.cubes[cid].children)


def _point_order(space: FiniteSHT) -> list[int]:
    return sorted(range(space.n), key=lambda i: (-space.mu[i], i))


def _root_level(space: FiniteSHT, delta: float) -> int:
    diam = space.diameter
    if diam <= 0.0:
        return 0
    k = math.floor(math.log(diam) / math.log(delta))
    while delta**k < diam:
        k -= 1
    while delta ** (k + 1) >= diam:
        k += 1
    return k


def build_grid(space: FiniteSHT, delta: float) -> DyadicGrid:
    """Build a dyadic decomposition of the space at scale ratio ``delta``.

    Requires 0 < delta <= 1/(8*kappa^3).  The net separation at level k is
    4*kappa*delta^k and only points whose delta^k-ball stays inside the
    parent are eligible as centers, which forces the inner sandwich
    inclusion B(center, delta^k) within each cube.  Raises DeltaTooLarge
    if delta violates the bound or a sandwich violation is detected.
    """
    if not (delta > 0.0):
        raise DeltaTooLarge("delta must be strictly positive")
    bound = 1.0 / (8.0 * space.kappa**3)
    if delta > bound * (1.0 + 1e-12):
        raise DeltaTooLarge(f"delta={delta} exceeds 1/(8*kappa^3)={bound}")

    n = space.n
    rho = space.rho
    mu = space.mu
    order = _point_order(space)
    rank = np.empty(n, dtype=np.int64)
    for pos, pt in enumerate(order):
        rank[pt] = pos

    k_root = _root_level(space, delta)
    cubes: list[dict] = []
    levels: dict[int, list[int]] = {}
    assignments: list[np.ndarray] = []

    def new_cube(level: int, members: np.ndarray, center: int, parent: int | None) -> int:
        cid = len(cubes)
        cubes.append(
            {
                "id": cid,
                "level": level,
                "members": np.sort(members),
                "center": int(center),
                "parent": parent,
                "children": [],
            }
        )
        levels.setdefault(level, []).append(cid)
        if parent is not None:
            cubes[parent]["children"].append(cid)
        return cid

    root = new_cube(k_root, np.arange(n), order[0], None)
    assignments.append(np.full(n, root, dtype=np.int64))
    current = [root]
    k = k_root
    while not all(len(cubes[cid]["members"]) == 1 for cid in current):
        k += 1
        if k - k_root > 10_000:
            raise DeltaTooLarge("refinement did not terminate (delta too close to 1?)")
        r = delta**k
        sep = 4.0 * space.kappa * r
        assignment = np.empty(n, dtype=np.int64)
        nxt: list[int] = []
        for pid in current:
            P = cubes[pid]
            mem = P["members"]
            if len(mem) == 1:
                cid = new_cube(k, mem, P["center"], pid)
                assignment[mem] = cid
                nxt.append(cid)
                continue
            in_p = np.zeros(n, dtype=bool)
            in_p[mem] = True
            # eligible centers: the delta^k-ball around them stays inside P
            balls = rho[mem] < r
            eligible = ~(balls & ~in_p[None, :]).any(axis=1)
            elig_set = {int(m) for m, ok in zip(mem, eligible) if ok}
            center = P["center"]
            candidates = [center] + [
                int(m) for m in sorted(mem, key=lambda i: rank[i]) if m != center and m in elig_set
            ]
            net: list[int] = []
            for y in candidates:
                if all(rho[y, c] >= sep for c in net):
                    net.append(y)
            dist = rho[np.ix_(mem, net)]
            choice = np.argmin(dist, axis=1)  # ties resolved toward lower net rank
            for j, c in enumerate(net):
                sel = mem[choice == j]
                if len(sel) == 0:
                    continue
                cid = new_cube(k, sel, c, pid)
                assignment[sel] = cid
                nxt.append(cid)
        assignments.append(assignment)
        current = nxt

    # certified constants
    epsilon = 1.0
    c_sand = 0.0
    for c in cubes:
        if c["parent"] is not None:
            epsilon = min(
                epsilon, float(mu[c["members"]].sum() / mu[cubes[c["parent"]]["members"]].sum())
            )
        reach = float(rho[c["center"], c["members"]].max()) if len(c["members"]) else 0.0
        c_sand = max(c_sand, reach / (delta ** c["level"]))
    c_sand = max(c_sand, 1.0)

    # inner sandwich inclusion must hold by construction; certify it
    for c in cubes:
        inner = np.flatnonzero(rho[c["center"]] < delta ** c["level"])
        if not np.isin(inner, c["members"]).all():
            raise DeltaTooLarge(
                f"inner sandwich ball escapes cube {c['id']} at level {c['level']}"
            )

    frozen = []
    for c in cubes:
        members = c["members"]
        mask = 0
        for m in members:
            mask |= 1 << int(m)
        members = members.copy()
        members.setflags(write=False)
        frozen.append(
            DyadicCube(
                id=c["id"],
                level=c["level"],
                members=members,
                mask=mask,
                center=c["center"],
                parent=c["parent"],
                children=tuple(c["children"]),
                mass=float(mu[members].sum()),
            )
        )
    leaf_of = assignments[-1].copy()
    leaf_of.setflags(write=False)
    return DyadicGrid(
        space=space,
        delta=delta,
        cubes=tuple(frozen),
        levels={k: tuple(v) for k, v in levels.items()},
        k_min=k_root,
        k_max=max(levels),
        epsilon=epsilon,
        C_sandwich=c_sand,
        leaf_of=leaf_of,
    )


@dataclass(frozen=True)
class PropertyCheck:
    passed: bool
    witness: str | None = None


@dataclass(frozen=True)
class GridVerification:
    properties: dict[int, PropertyCheck]

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties.values())

    def to_dict(self) -> dict:
        return {
            str(i): {"passed": p.passed, "witness": p.witness}
            for i, p in sorted(self.properties.items())
        }


def verify_grid(grid: DyadicGrid, rtol: float = 1e-12) -> GridVerification:
    """Exhaustively check the six structural properties of a dyadic grid.

    1. every level partitions the space;
    2. any two cubes are nested or disjoint;
    3. every cube above the finest level has at least one child and
       children partition their parent;
    4. every cube below the coarsest level has exactly one parent
       containing it;
    5. each child retains at least the stored epsilon fraction of its
       parent's mass;
    6. sandwich: the open delta^k-ball around the center lies inside the
       cube, and the cube lies within C_sandwich * delta^k of its center.

    Failures are reported with witnesses, never raised.
    """
    space = grid.space
    n = space.n
    full_mask = (1 << n) - 1
    total = space.total_mass
    checks: dict[int, PropertyCheck] = {}

    # (1) partition per level
    witness = None
    for k in grid.level_list:
        ids = grid.levels[k]
        union = 0
        count = 0
        mass = 0.0
        for cid in ids:
            c = grid.cubes[cid]
            union |= c.mask
            count += len(c.members)
            mass += c.mass
        if union != full_mask or count != n:
            witness = f"level {k} does not partition the space"
            break
        if abs(mass - total) > rtol * total:
            witness = f"level {k} mass {mass} != total {total}"
            break
    checks[1] = PropertyCheck(witness is None, witness)

    # (2) pairwise nesting
    witness = None
    masks = [(c.id, c.mask) for c in grid.cubes]
    for i in range(len(masks)):
        ai, am = masks[i]
        for j in range(i + 1, len(masks)):
            bi, bm = masks[j]
            inter = am & bm
            if inter and inter != am and inter != bm:
                witness = f"cubes {ai} and {bi} overlap without nesting"
                break
        if witness:
            break
    checks[2] = PropertyCheck(witness is None, witness)

    # (3) children exist and partition the parent
    witness = None
    for c in grid.cubes:
        if c.level == grid.k_max:
            continue
        if not c.children:
            witness = f"cube {c.id} at level {c.level} has no child"
            break
        union = 0
        count = 0
        for ch in c.children:
            cc = grid.cubes[ch]
            if cc.mask & ~c.mask:
                witness = f"child {ch} is not contained in parent {c.id}"
                break
            union |= cc.mask
            count += len(cc.members)
        if witness:
            break
        if union != c.mask or count != len(c.members):
            witness = f"children of cube {c.id} do not partition it"
            break
    checks[3] = PropertyCheck(witness is None, witness)

    # (4) unique parent
    witness = None
    for c in grid.cubes:
        if c.level == grid.k_min:
            if c.parent is not None:
                witness = f"top-level cube {c.id} has a parent"
                break
            continue
        if c.parent is None:
            witness = f"cube {c.id} below the top has no parent"
            break
        p = grid.cubes[c.parent]
        if p.level != c.level - 1 or (c.mask & ~p.mask):
            witness = f"cube {c.id} is not inside its parent {c.parent}"
            break
        containing = [
            pid for pid in grid.levels.get(c.level - 1, ()) if not (c.mask & ~grid.cubes[pid].mask)
        ]
        if len(containing) != 1:
            witness = f"cube {c.id} is contained in {len(containing)} cubes one level up"
            break
    checks[4] = PropertyCheck(witness is None, witness)

    # (5) mass retention
    witness = None
    for c in grid.cubes:
        if c.parent is None:
            continue
        ratio = c.mass / grid.cubes[c.parent].mass
        if ratio < grid.epsilon * (1.0 - rtol):
            witness = f"child {c.id} keeps only {ratio} of parent mass (< epsilon={grid.epsilon})"
            break
    checks[5] = PropertyCheck(witness is None, witness)

    # (6) sandwich with the stored constants
    witness = None
    for c in grid.cubes:
        r = grid.delta**c.level
        inner = np.flatnonzero(space.rho[c.center] < r)
        if not np.isin(inner, c.members).all():
            bad = [int(i) for i in inner if i not in set(c.members.tolist())]
            witness = f"point {bad[0]} lies in B(center,{r}) but outside cube {c.id}"
            break
        reach = float(space.rho[c.center, c.members].max()) if len(c.members) else 0.0
        if reach > grid.C_sandwich * r * (1.0 + rtol):
            witness = f"cube {c.id} reaches {reach} > C*delta^k = {grid.C_sandwich * r}"
            break
    checks[6] = PropertyCheck(witness is None, witness)

    return GridVerification(properties=checks)


def cz_decompose(grid: DyadicGrid, f, lam: float, within: int | None = None) -> tuple[int, ...]:
    """Maximal dyadic cubes on which the average of f exceeds lam.

    Stopping-time selection: walk the tree top-down and keep a cube as
    soon as its average exceeds lam, without descending further.  The
    selected cubes are pairwise disjoint; each selected cube with a
    parent has average at most lam/epsilon.  f must be nonnegative.
    """
    if not (lam > 0.0):
        raise LambdaNonpositive(f"lambda must be positive, got {lam}")
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0.0):
        raise ValueError("cz_decompose expects a nonnegative function")
    avgs = grid.averages(f)
    roots = [within] if within is not None else [grid.root_id]
    selected: list[int] = []
    stack = list(roots)
    while stack:
        cid = stack.pop()
        if avgs[cid] > lam:
            selected.append(cid)
        else:
            stack.extend(grid.cubes[cid].children)
    return tuple(sorted(selected))


def _member_bool(grid: DyadicGrid, cid: int) -> np.ndarray:
    out = np.zeros(grid.space.n, dtype=bool)
    out[grid.cubes[cid].members] = True
    return out


@dataclass(frozen=True)
class SparseFamily:
    """A sparsity-certified subset of one grid's cubes.

    For every member cube Q the union of its proper member subcubes holds
    at most half of Q's mass, so the designated sets E(Q) = Q minus that
    union are pairwise disjoint and retain at least half the mass.
    Duplicate member sets are rejected: they would collapse E(Q).
    """

    grid: DyadicGrid
    cube_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        seen_masks = set()
        for cid in self.cube_ids:
            if not (0 <= cid < len(self.grid.cubes)):
                raise MixedGrids(f"cube id {cid} does not belong to this grid")
            m = self.grid.cubes[cid].mask
            if m in seen_masks:
                raise ValueError(f"duplicate member set in sparse family (cube {cid})")
            seen_masks.add(m)

    def proper_subcube_union_mass(self) -> dict[int, float]:
        mu = self.grid.space.mu
        out = {}
        for cid in self.cube_ids:
            big = self.grid.cubes[cid].mask
            acc = 0
            for other in self.cube_ids:
                m = self.grid.cubes[other].mask
                if m != big and (m & big) == m:
                    acc |= m
            mass = 0.0
            if acc:
                idx = [i for i in range(self.grid.space.n) if (acc >> i) & 1]
                mass = float(mu[idx].sum())
            out[cid] = mass
        return out

    def designated_sets(self) -> dict[int, np.ndarray]:
        """E(Q) = Q minus the union of proper subcubes from the family."""
        out = {}
        for cid in self.cube_ids:
            big = self.grid.cubes[cid].mask
            acc = 0
            for other in self.cube_ids:
                m = self.grid.cubes[other].mask
                if m != big and (m & big) == m:
                    acc |= m
            keep = big & ~acc
            out[cid] = np.array([i for i in range(self.grid.space.n) if (keep >> i) & 1])
        return out

    def worst_ratio(self) -> float:
        union_mass = self.proper_subcube_union_mass()
        worst = 0.0
        for cid, m in union_mass.items():
            worst = max(worst, m / self.grid.cubes[cid].mass)
        return worst


def is_sparse(family: SparseFamily) -> tuple[bool, float]:
    """Whether the family satisfies the half-mass sparsity bound, plus the
    worst proper-subcube mass ratio."""
    worst = family.worst_ratio()
    return worst <= 0.5 * (1.0 + 1e-12), worst


def _greedy_repair(grid: DyadicGrid, candidate_ids) -> SparseFamily:
    """Deterministic coarse-to-fine thinning: admit a cube only if every
    admitted ancestor keeps its proper-subcube union at half mass."""
    order = sorted(set(candidate_ids), key=lambda cid: (grid.cubes[cid].level, cid))
    mu = grid.space.mu
    admitted: list[int] = []
    seen_masks: set[int] = set()
    sub_union: dict[int, np.ndarray] = {}
    member_bool: dict[int, np.ndarray] = {}
    for cid in order:
        cube = grid.cubes[cid]
        if cube.mask in seen_masks:
            continue
        mb = _member_bool(grid, cid)
        updates = []
        ok = True
        for aid in admitted:
            am = grid.cubes[aid].mask
            if am != cube.mask and (cube.mask & am) == cube.mask:
                merged = sub_union[aid] | mb
                if float(mu[merged].sum()) > 0.5 * grid.cubes[aid].mass * (1.0 + 1e-12):
                    ok = False
                    break
                updates.append((aid, merged))
        if not ok:
            continue
        for aid, merged in updates:
            sub_union[aid] = merged
        admitted.append(cid)
        seen_masks.add(cube.mask)
        sub_union[cid] = np.zeros(grid.space.n, dtype=bool)
        member_bool[cid] = mb
    return SparseFamily(grid=grid, cube_ids=tuple(sorted(admitted)))


def extract_sparse(grid: DyadicGrid, rule) -> SparseFamily:
    """Assemble a certified sparse family from a selection rule.

    Rules: ``"all-levels-thinned"`` (greedy top-down over every cube),
    ``("cz-stack", f)`` (stopping-time cubes of f at thresholds 2^m),
    ``("random", p, seed)`` (independent coin flips).  Every rule is
    followed by the same deterministic greedy repair, so the result is
    always sparse and reproducible.
    """
    if rule == "all-levels-thinned":
        candidates = [c.id for c in grid.cubes]
    elif isinstance(rule, tuple) and rule and rule[0] == "cz-stack":
        f = np.asarray(rule[1], dtype=np.float64)
        avgs = grid.averages(np.abs(f))
        pos = avgs[avgs > 0.0]
        candidates = []
        if len(pos):
            m_hi = math.ceil(math.log2(float(pos.max())))
            m_lo = math.floor(math.log2(float(pos.min()))) - 1
            m_lo = max(m_lo, m_hi - 80)
            for m in range(m_hi, m_lo - 1, -1):
                candidates.extend(cz_decompose(grid, np.abs(f), 2.0**m))
    elif isinstance(rule, tuple) and rule and rule[0] == "random":
        _, p, seed = rule
        rng = np.random.default_rng(seed)
        flips = rng.random(len(grid.cubes))
        candidates = [c.id for c in grid.cubes if flips[c.id] < p]
    else:
        raise ValueError(f"unknown sparse selection rule: {rule!r}")
    return _greedy_repair(grid, candidates)


def subtree_max_integral(grid: DyadicGrid, avgs: np.ndarray, transform=None) -> np.ndarray:
    """For every cube Q, integrate over Q the running maximum of cube
    averages along root(Q)-to-leaf chains, optionally postcomposed with a
    transform.

    Returns an array indexed by cube id with
    sum over x in Q of transform(max_{x in R subseteq Q} avgs[R]) * mu(x),
    which realizes integrals of the maximal function localized to Q.
    """
    out = np.zeros(len(grid.cubes))
    for top in range(len(grid.cubes)):
        total = 0.0
        stack = [(top, -math.inf)]
        while stack:
            cid, running = stack.pop()
            cube = grid.cubes[cid]
            running = max(running, float(avgs[cid]))
            if not cube.children:
                val = transform(running) if transform is not None else running
                total += val * cube.mass
            else:
                for ch in cube.children:
                    stack.append((ch, running))
        out[top] = total
    return out
