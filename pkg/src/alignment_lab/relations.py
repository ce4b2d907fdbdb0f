"""Integer-relation detection by lattice reduction, and the rational rank of a velocity vector."""

import itertools
import math
from collections.abc import Sequence
from fractions import Fraction
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidState

LOVASZ_DELTA = 0.99
MAX_KRONECKER_DIMENSION = 16


class RelationQuery(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v: list[float] = Field(min_length=1)
    tol: float = Field(default=1e-12, gt=0.0)
    bound: int = Field(default=100, ge=1)
    scale: float | None = None

    @model_validator(mode="after")
    def _check_scale(self) -> "RelationQuery":
        if not all(math.isfinite(x) for x in self.v):
            raise ValueError("Relation queries need finite entries")
        if self.scale is not None and self.scale < 1.0 / self.tol:
            raise ValueError(f"Embedding scale {self.scale} is below 1/tol = {1.0 / self.tol}")
        return self

    @property
    def gamma(self) -> float:
        return self.scale if self.scale is not None else 10.0 / self.tol


class RelationFound(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["found"] = "found"
    q: list[int]
    residual: float


class NoneFound(BaseModel):
    """No relation within (tol, bound); `certified_bound` is the coefficient size the reduction rules out."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["none"] = "none"
    certified_bound: float


RelationResult = Annotated[RelationFound | NoneFound, Field(discriminator="kind")]


# ---------------------------------------------------------------------------
# Lattice reduction


def _gram_schmidt(basis: list[list[int]]) -> tuple[list[list[Fraction]], list[Fraction]]:
    """Exact Gram-Schmidt coefficients mu[i][j] and squared norms B[i] of the orthogonalised rows."""
    m = len(basis)
    ortho: list[list[Fraction]] = []
    mu = [[Fraction(0)] * m for _ in range(m)]
    norms: list[Fraction] = []
    for i, row in enumerate(basis):
        vec = [Fraction(c) for c in row]
        for j in range(i):
            if norms[j] == 0:
                continue
            mu[i][j] = sum((Fraction(a) * b for a, b in zip(row, ortho[j], strict=True)), Fraction(0)) / norms[j]
            vec = [a - mu[i][j] * b for a, b in zip(vec, ortho[j], strict=True)]
        ortho.append(vec)
        norms.append(sum((c * c for c in vec), Fraction(0)))
    return mu, norms


def lll_reduce(basis: Sequence[Sequence[int]], delta: float = LOVASZ_DELTA) -> list[list[int]]:
    """LLL-reduce the rows of an integer basis in exact rational arithmetic.

    The result spans the same lattice, is size-reduced and satisfies the Lovasz condition with `delta`.
    """
    if not 0.25 < delta < 1.0:
        raise InvalidState(f"Lovasz parameter must lie in (1/4, 1), got {delta}")
    b = [[int(c) for c in row] for row in basis]
    if not b:
        raise InvalidState("Empty basis")
    if len({len(row) for row in b}) != 1:
        raise InvalidState("Basis rows have different lengths")

    mu, norms = _gram_schmidt(b)
    if any(norm == 0 for norm in norms):
        raise InvalidState("Basis rows are linearly dependent")

    m = len(b)
    lovasz = Fraction(delta)
    half = Fraction(1, 2)

    def size_reduce(k: int, ell: int) -> None:
        if abs(mu[k][ell]) <= half:
            return
        q = math.floor(mu[k][ell] + half)
        b[k] = [a - q * c for a, c in zip(b[k], b[ell], strict=True)]
        mu[k][ell] -= q
        for i in range(ell):
            mu[k][i] -= q * mu[ell][i]

    def swap(k: int) -> None:
        b[k], b[k - 1] = b[k - 1], b[k]
        for j in range(k - 1):
            mu[k][j], mu[k - 1][j] = mu[k - 1][j], mu[k][j]
        shift = mu[k][k - 1]
        merged = norms[k] + shift * shift * norms[k - 1]
        mu[k][k - 1] = shift * norms[k - 1] / merged
        norms[k] = norms[k - 1] * norms[k] / merged
        norms[k - 1] = merged
        for i in range(k + 1, m):
            t = mu[i][k]
            mu[i][k] = mu[i][k - 1] - shift * t
            mu[i][k - 1] = t + mu[k][k - 1] * mu[i][k]

    k = 1
    while k < m:
        size_reduce(k, k - 1)
        if norms[k] < (lovasz - mu[k][k - 1] ** 2) * norms[k - 1]:
            swap(k)
            k = max(1, k - 1)
        else:
            for ell in range(k - 2, -1, -1):
                size_reduce(k, ell)
            k += 1
    return b


# ---------------------------------------------------------------------------
# Relation search


def _residual(q: Sequence[int], v: Sequence[float]) -> float:
    return abs(math.fsum(qi * vi for qi, vi in zip(q, v, strict=True)))


def _canonical_sign(q: list[int]) -> list[int]:
    lead = next(c for c in q if c != 0)
    return q if lead > 0 else [-c for c in q]


def _certified_bound(reduced: list[list[int]], d: int, gamma_tol: float) -> float:
    """Largest max-coefficient B such that no relation with |q_i| <= B and residual <= tol can exist.

    Any lattice vector is at least min_i |b*_i| long, while a relation q embeds as a vector of squared
    length at most d B^2 + (gamma tol + d B / 2)^2.
    """
    r = np.linalg.qr(np.asarray(reduced, dtype=np.float64).T, mode="r")
    shortest = float(np.min(np.abs(np.diag(r))))
    if gamma_tol >= shortest:
        return 0.0
    a = d + d * d / 4.0
    lin = gamma_tol * d
    const = gamma_tol**2 - shortest**2
    return max(0.0, (-lin + math.sqrt(lin * lin - 4.0 * a * const)) / (2.0 * a))


def integer_relation(query: RelationQuery) -> RelationFound | NoneFound:
    """Search for a nonzero integer q with |q . v| <= tol and max |q_i| <= bound.

    The rows of [I | round(gamma v)] are reduced; reduced rows and their pairwise sums and
    differences are scanned for admissible relations, the smallest one is returned.
    """
    v = query.v
    d = len(v)
    gamma = query.gamma
    rows = [[1 if i == j else 0 for j in range(d)] + [round(gamma * v[i])] for i in range(d)]
    reduced = lll_reduce(rows)

    candidates = [row[:d] for row in reduced]
    for a, b in itertools.combinations(reduced, 2):
        candidates.append([x + y for x, y in zip(a[:d], b[:d], strict=True)])
        candidates.append([x - y for x, y in zip(a[:d], b[:d], strict=True)])

    best: tuple[tuple[int, int, float], list[int]] | None = None
    for q in candidates:
        if not any(q):
            continue
        height = max(abs(c) for c in q)
        if height > query.bound:
            continue
        residual = _residual(q, v)
        if residual > query.tol:
            continue
        key = (height, sum(abs(c) for c in q), residual)
        if best is None or key < best[0]:
            best = (key, _canonical_sign(q))

    if best is None:
        return NoneFound(certified_bound=_certified_bound(reduced, d, gamma * query.tol))

    q = best[1]
    residual = _residual(q, v)
    if residual > query.tol or not any(q):
        raise InvalidState(f"Unsound relation {q} with residual {residual}")
    return RelationFound(q=q, residual=residual)


def kronecker_dimension(v: Sequence[float], tol: float = 1e-12, bound: int = 100) -> int:
    """Rational rank of span_Q(v), with relations detected at (tol, bound).

    Each detected relation expresses one coordinate as a rational combination of the others; that
    coordinate is dropped and the search repeats on the rest.
    """
    if len(v) > MAX_KRONECKER_DIMENSION:
        raise InvalidState(f"Kronecker dimension is limited to d <= {MAX_KRONECKER_DIMENSION}, got {len(v)}")
    coords = [float(c) for c in v]
    while coords:
        result = integer_relation(RelationQuery(v=coords, tol=tol, bound=bound))
        if isinstance(result, NoneFound):
            break
        heights = [abs(c) for c in result.q]
        del coords[heights.index(max(heights))]
    return len(coords)
