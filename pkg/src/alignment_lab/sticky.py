"""Event-driven sticky-particle dynamics on the torus.

Clusters fly freely, and whenever two member agents of different clusters reach distance r0 the
clusters involved fuse into one rigid cluster moving with their mass-weighted mean velocity.
"""

import itertools
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .dynamics import EnsembleState, SystemSpec
from .errors import InvalidState, Unsupported
from .geometry import FloatArray, Torus, minimal_image, pairwise_distances, wrap_position

logger = logging.getLogger(__name__)

TAU_EVENT = 1e-9
TAU_GEOM = 1e-9


class Cluster(BaseModel):
    """Rigid group of agents; member k sits at anchor + offsets[k] + (s - t) * velocity."""

    model_config = ConfigDict(frozen=True)

    members: tuple[int, ...] = Field(min_length=1)
    mass: float = Field(gt=0.0)
    anchor: tuple[float, ...]
    offsets: tuple[tuple[float, ...], ...]
    velocity: tuple[float, ...]

    @model_validator(mode="after")
    def _check_shapes(self) -> "Cluster":
        if len(self.offsets) != len(self.members):
            raise ValueError(f"{len(self.members)} members but {len(self.offsets)} offsets")
        n = len(self.anchor)
        if len(self.velocity) != n or any(len(o) != n for o in self.offsets):
            raise ValueError("Anchor, offsets and velocity must share one dimension")
        return self


class ClusterSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    clusters: tuple[Cluster, ...] = Field(min_length=1)
    t: float
    r0: float = Field(gt=0.0)
    domain: Torus

    @model_validator(mode="after")
    def _check_partition(self) -> "ClusterSet":
        if self.r0 >= self.domain.period / 2:
            raise ValueError(f"Gluing radius {self.r0} must stay below half the period")
        members = sorted(itertools.chain.from_iterable(c.members for c in self.clusters))
        if members != list(range(len(members))):
            raise ValueError("Cluster members must partition the agents")
        return self

    @property
    def N(self) -> int:
        return sum(len(c.members) for c in self.clusters)

    @property
    def K(self) -> int:
        return len(self.clusters)

    @property
    def total_mass(self) -> float:
        return math.fsum(c.mass for c in self.clusters)

    def momentum(self) -> FloatArray:
        return np.array(
            [math.fsum(c.mass * c.velocity[d] for c in self.clusters) for d in range(self.domain.n)],
        )

    def kinetic_energy(self) -> float:
        return math.fsum(0.5 * c.mass * sum(w * w for w in c.velocity) for c in self.clusters)

    def labels(self) -> np.ndarray:
        labels = np.empty(self.N, dtype=np.int64)
        for k, cluster in enumerate(self.clusters):
            labels[list(cluster.members)] = k
        return labels

    def positions(self) -> FloatArray:
        """Wrapped agent positions at time t, shape (N, n)."""
        x = np.empty((self.N, self.domain.n))
        for cluster in self.clusters:
            x[list(cluster.members)] = np.asarray(cluster.anchor) + np.asarray(cluster.offsets)
        return wrap_position(x, self.domain)

    def velocities(self) -> FloatArray:
        v = np.empty((self.N, self.domain.n))
        for cluster in self.clusters:
            v[list(cluster.members)] = cluster.velocity
        return v


class StickyEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time: float
    clusters: tuple[int, ...] = Field(min_length=2)
    witnesses: tuple[tuple[int, int], ...] = Field(min_length=1)


class StickyParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_max: float = Field(ge=0.0)
    r0: float | None = Field(default=None, gt=0.0)
    tau_event: float = Field(default=TAU_EVENT, gt=0.0)
    tau_geom: float = Field(default=TAU_GEOM, ge=0.0)


class StickyRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: StickyParams
    initial: ClusterSet
    events: list[StickyEvent]
    final: ClusterSet

    def cluster_counts(self) -> list[tuple[float, int]]:
        """(t, K) after the initial gluing and after every event."""
        counts = [(self.initial.t, self.initial.K)]
        k = self.initial.K
        for event in self.events:
            k -= len(event.clusters) - 1
            counts.append((event.time, k))
        return counts


# ---------------------------------------------------------------------------
# Construction and free flight


def _rigid_cluster(members: list[int], unwrapped: FloatArray, masses: FloatArray, velocity: FloatArray) -> Cluster:
    """Cluster whose anchor is the first member; `unwrapped` rows are continuous member positions."""
    base = unwrapped[0]
    return Cluster(
        members=tuple(members),
        mass=math.fsum(masses.tolist()),
        anchor=tuple(float(c) for c in base),
        offsets=tuple(tuple(float(c) for c in row - base) for row in unwrapped),
        velocity=tuple(float(c) for c in velocity),
    )


def _mass_average(masses: FloatArray, velocities: FloatArray) -> FloatArray:
    total = math.fsum(masses.tolist())
    return np.array(
        [math.fsum((masses * velocities[:, d]).tolist()) / total for d in range(velocities.shape[1])],
    )


def from_state(
    state: EnsembleState,
    domain: Torus,
    r0: float,
    masses: FloatArray | None = None,
) -> ClusterSet:
    """Initial cluster set; agents closer than r0 (transitively) are glued before the run starts."""
    if not isinstance(domain, Torus):
        raise Unsupported("Sticky dynamics are defined on the torus only")
    N = state.N
    m = np.ones(N) if masses is None else np.asarray(masses, dtype=np.float64)
    if m.shape != (N,) or np.any(m <= 0.0):
        raise InvalidState(f"Expected {N} positive masses")

    x = wrap_position(state.x, domain)
    adjacency = csr_matrix((pairwise_distances(x, domain) < r0).astype(np.int8))
    n_groups, labels = connected_components(adjacency, directed=False)

    clusters: list[Cluster] = []
    for label in sorted(range(n_groups), key=lambda g: int(np.flatnonzero(labels == g)[0])):
        members = np.flatnonzero(labels == label).tolist()
        # walk a spanning tree so that offsets follow the contacts, not the wrap of each agent
        order, parents = breadth_first_order(adjacency, members[0], directed=False)
        unwrapped = {members[0]: x[members[0]]}
        for node in order[1:]:
            parent = int(parents[node])
            unwrapped[int(node)] = unwrapped[parent] + minimal_image(x[node] - x[parent], domain)
        rows = np.array([unwrapped[i] for i in members])
        velocity = _mass_average(m[members], state.v[members]) if len(members) > 1 else state.v[members[0]]
        clusters.append(_rigid_cluster(members, rows, m[members], velocity))
        if len(members) > 1:
            logger.debug("Pre-glued agents %s at t=%g", members, state.t)

    return ClusterSet(clusters=tuple(clusters), t=state.t, r0=r0, domain=domain)


def advance(cs: ClusterSet, s: float) -> ClusterSet:
    """Exact free flight from cs.t to s."""
    if s < cs.t:
        raise InvalidState(f"Cannot advance backwards from t={cs.t} to {s}")
    if s == cs.t:
        return cs
    dt = s - cs.t
    clusters = tuple(
        c.model_copy(
            update={
                "anchor": tuple(
                    float(a)
                    for a in wrap_position(np.asarray(c.anchor) + dt * np.asarray(c.velocity), cs.domain)
                ),
            },
        )
        for c in cs.clusters
    )
    return cs.model_copy(update={"clusters": clusters, "t": s})


def min_intercluster_distance(cs: ClusterSet) -> float:
    if cs.K < 2:
        return math.inf
    labels = cs.labels()
    dist = pairwise_distances(cs.positions(), cs.domain)
    return float(dist[labels[:, None] != labels[None, :]].min())


# ---------------------------------------------------------------------------
# Event search


def _shift_grid(n: int, reach: int, period: float) -> FloatArray:
    axis = np.arange(-reach, reach + 1, dtype=np.float64)
    return period * np.array(list(itertools.product(axis, repeat=n)))


def next_event(
    cs: ClusterSet,
    t_max: float,
    tau_event: float = TAU_EVENT,
    tau_geom: float = TAU_GEOM,
) -> StickyEvent | None:
    """Earliest time in [t, t_max] at which members of two clusters reach distance r0.

    Time is scanned in windows of length period / max|dv|; inside a window the relative
    displacement moves by at most one period, so only a few lattice images per pair can
    reach r0 and each contributes the entering root of a quadratic.
    """
    if cs.K < 2 or t_max < cs.t:
        return None
    period = cs.domain.period
    labels = cs.labels()
    ii, jj = np.triu_indices(cs.N, k=1)
    keep = labels[ii] != labels[jj]
    ii, jj = ii[keep], jj[keep]

    x = cs.positions()
    v = cs.velocities()
    dx0 = minimal_image(x[ii] - x[jj], cs.domain)
    dv = v[ii] - v[jj]

    closest = float(np.sqrt(np.sum(dx0**2, axis=-1)).min())
    if closest < cs.r0 - tau_geom:
        raise InvalidState(f"Clusters overlap: distance {closest} < r0={cs.r0} at t={cs.t}")

    speed = np.sqrt(np.sum(dv**2, axis=-1))
    top = float(speed.max())
    if top == 0.0:
        return None
    moving = speed > 0.0
    ii, jj, dx0, dv = ii[moving], jj[moving], dx0[moving], dv[moving]

    window = period / top
    n = cs.domain.n
    reach = math.ceil((top * (window + tau_event) + math.sqrt(n) * period / 2 + cs.r0) / period)
    shifts = _shift_grid(n, reach, period)
    a = np.sum(dv**2, axis=-1)[:, None]
    r0_sq = cs.r0**2

    # several windows per pass, bounded so the (pairs, windows, shifts, n) block stays small
    batch = max(1, 2**16 // (len(ii) * len(shifts)))
    horizon = t_max - cs.t
    k0 = 0
    while k0 * window <= horizon:
        ks = np.arange(k0, k0 + batch)
        starts = ks * window
        base = minimal_image(dx0[:, None, :] + starts[None, :, None] * dv[:, None, :], cs.domain)
        d = base[:, :, None, :] + shifts[None, None, :, :]  # (pairs, windows, shifts, n)
        b = np.einsum("pwsn,pn->pws", d, dv)
        c = np.sum(d**2, axis=-1) - r0_sq
        disc = b * b - a[:, :, None] * c
        hit = (b < 0.0) & (disc >= 0.0)
        # entering root c / (-b + sqrt(disc)), the stable form of (-b - sqrt(disc)) / a
        root = np.where(hit, c / np.where(hit, -b + np.sqrt(np.where(hit, disc, 0.0)), 1.0), np.inf)
        if k0 == 0:
            # contacts already touching and closing in fire immediately
            root[:, 0, :] = np.where(hit[:, 0, :], np.maximum(root[:, 0, :], 0.0), np.inf)
        root = np.where((root >= 0.0) & (root <= window + tau_event), root, np.inf)
        elapsed = starts[None, :, None] + root
        per_pair = elapsed.min(axis=(1, 2))
        first = float(per_pair.min())
        if math.isfinite(first):
            if first > horizon:
                return None
            return _coalesce(cs, labels, ii, jj, per_pair, first, cs.t + first, tau_event)
        k0 += batch
    return None


def _coalesce(
    cs: ClusterSet,
    labels: np.ndarray,
    ii: np.ndarray,
    jj: np.ndarray,
    per_pair: FloatArray,
    first: float,
    t_star: float,
    tau_event: float,
) -> StickyEvent:
    """Event made of the clusters linked to the earliest pair by contacts within tau_event of it."""
    near = np.flatnonzero(per_pair <= first + tau_event)
    rows = labels[ii[near]]
    cols = labels[jj[near]]
    graph = csr_matrix((np.ones(len(near), dtype=np.int8), (rows, cols)), shape=(cs.K, cs.K))
    _, component = connected_components(graph, directed=False)
    earliest = int(near[np.argmin(per_pair[near])])
    target = component[labels[ii[earliest]]]
    involved = tuple(int(k) for k in np.flatnonzero(component == target))
    witnesses = tuple(
        (int(ii[p]), int(jj[p])) for p in near if component[labels[ii[p]]] == target
    )
    logger.debug("Event at t=%.12g merging clusters %s", t_star, involved)
    return StickyEvent(time=t_star, clusters=involved, witnesses=witnesses)


# ---------------------------------------------------------------------------
# Merging and runs


def merge(cs: ClusterSet, event: StickyEvent) -> ClusterSet:
    """Fuse the event's clusters into one rigid cluster with the mass-weighted mean velocity.

    Members keep their absolute positions at the event time; clusters are chained through the
    witnessing contacts so the merged offsets are continuous across the torus.
    """
    cs = advance(cs, max(cs.t, event.time))
    involved = sorted(event.clusters)
    owner = {agent: k for k in involved for agent in cs.clusters[k].members}
    x = cs.positions()

    placed: dict[int, FloatArray] = {}
    root = involved[0]
    root_cluster = cs.clusters[root]
    for agent, offset in zip(root_cluster.members, root_cluster.offsets, strict=True):
        placed[agent] = np.asarray(root_cluster.anchor) + np.asarray(offset)
    done = {root}
    while len(done) < len(involved):
        progressed = False
        for i, j in event.witnesses:
            for known, other in ((i, j), (j, i)):
                if known in placed and owner[other] not in done:
                    cluster = cs.clusters[owner[other]]
                    contact = placed[known] + minimal_image(x[other] - x[known], cs.domain)
                    offsets = np.asarray(cluster.offsets)
                    pivot = offsets[cluster.members.index(other)]
                    for agent, offset in zip(cluster.members, offsets, strict=True):
                        placed[agent] = contact + (offset - pivot)
                    done.add(owner[other])
                    progressed = True
        if not progressed:
            raise InvalidState(f"Witnesses {event.witnesses} do not connect clusters {involved}")

    members = sorted(placed)
    masses = np.array([cs.clusters[k].mass for k in involved])
    velocities = np.array([cs.clusters[k].velocity for k in involved])
    fused = _rigid_cluster(members, np.array([placed[a] for a in members]), masses, _mass_average(masses, velocities))
    fused = fused.model_copy(
        update={"anchor": tuple(float(c) for c in wrap_position(np.asarray(fused.anchor), cs.domain))},
    )

    rest = [c for k, c in enumerate(cs.clusters) if k not in owner.values()]
    clusters = sorted([*rest, fused], key=lambda c: min(c.members))
    return cs.model_copy(update={"clusters": tuple(clusters)})


def run_sticky(initial: EnsembleState, system: SystemSpec, params: StickyParams) -> StickyRecord:
    """Alternate free flight and merges until one cluster remains or t_max is reached."""
    if not isinstance(system.domain, Torus):
        raise Unsupported("Sticky dynamics are defined on the torus only")
    r0 = params.r0 if params.r0 is not None else system.kernel.support_radius
    if not math.isfinite(r0) or r0 <= 0.0:
        raise Unsupported(f"Sticky dynamics need a finite gluing radius, got {r0}")
    masses = system.mass_vector

    start = from_state(initial, system.domain, r0, masses)
    logger.info("Sticky run with %d agents in %d clusters up to t=%g", start.N, start.K, params.t_max)
    cs = start
    events: list[StickyEvent] = []
    while cs.K > 1:
        event = next_event(cs, params.t_max, params.tau_event, params.tau_geom)
        if event is None:
            break
        cs = merge(cs, event)
        events.append(event)
    final = advance(cs, max(cs.t, params.t_max))
    logger.info("Sticky run finished with %d events and %d clusters", len(events), final.K)
    return StickyRecord(params=params, initial=start, events=events, final=final)


def replay(record: StickyRecord) -> ClusterSet:
    """Re-apply the event log to the initial cluster set."""
    cs = record.initial
    for event in record.events:
        cs = merge(cs, event)
    return advance(cs, record.final.t)
