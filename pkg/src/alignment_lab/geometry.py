"""Positions, wrapping and minimal-image displacement on the flat torus and on open space."""

import math
from typing import Annotated, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .errors import InvalidState

TWO_PI = 2.0 * math.pi

FloatArray = NDArray[np.float64]


class Torus(BaseModel):
    """Flat torus [0, period)^n."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["torus"] = "torus"
    n: int = Field(ge=1)
    period: float = Field(default=TWO_PI, gt=0.0)


class OpenSpace(BaseModel):
    """Euclidean space R^n."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["open"] = "open"
    n: int = Field(ge=1)


Domain = Annotated[Torus | OpenSpace, Field(discriminator="kind")]


def as_vector(x: ArrayLike) -> FloatArray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidState(f"Non-finite coordinates: {arr!r}")
    return arr


def wrap_position(x: ArrayLike, domain: Torus | OpenSpace) -> FloatArray:
    """Map coordinates into [0, period) on the torus; identity on open space.

    Accepts a single vector or any array whose last axis has length n.
    """
    arr = as_vector(x)
    if arr.shape[-1] != domain.n:
        raise InvalidState(f"Expected {domain.n} coordinates, got shape {arr.shape}")
    if isinstance(domain, OpenSpace):
        return arr.copy()
    wrapped = np.mod(arr, domain.period)
    # np.mod of a tiny negative number rounds up to the period itself
    wrapped[wrapped >= domain.period] = 0.0
    return wrapped


def minimal_image(delta: ArrayLike, domain: Torus | OpenSpace) -> FloatArray:
    """Representative of a raw coordinate difference in [-period/2, period/2)."""
    arr = np.asarray(delta, dtype=np.float64)
    if isinstance(domain, OpenSpace):
        return arr
    period = domain.period
    return arr - period * np.floor(arr / period + 0.5)


def displacement(x: ArrayLike, y: ArrayLike, domain: Torus | OpenSpace) -> FloatArray:
    """Minimal-image representative of x - y.

    The antipodal tie (a coordinate difference of exactly period/2) is canonicalised to -period/2.
    """
    xa = as_vector(x)
    ya = as_vector(y)
    if xa.shape[-1] != domain.n or ya.shape[-1] != domain.n:
        raise InvalidState(f"Dimension mismatch: {xa.shape} vs {ya.shape} in a {domain.n}-dimensional domain")
    return minimal_image(xa - ya, domain)


def distance(x: ArrayLike, y: ArrayLike, domain: Torus | OpenSpace) -> float:
    return float(np.linalg.norm(displacement(x, y, domain)))


def pairwise_displacements(x: FloatArray, domain: Torus | OpenSpace) -> FloatArray:
    """Array d[i, j] = displacement(x_i, x_j) of shape (N, N, n)."""
    return minimal_image(x[:, None, :] - x[None, :, :], domain)


def pairwise_distances(x: FloatArray, domain: Torus | OpenSpace) -> FloatArray:
    return np.sqrt(np.sum(pairwise_displacements(x, domain) ** 2, axis=-1))


def min_pair_distance(x: FloatArray, domain: Torus | OpenSpace) -> float:
    """Smallest distance between two distinct agents; +inf for a single agent."""
    if x.shape[0] < 2:
        return math.inf
    dist = pairwise_distances(x, domain)
    upper = np.triu_indices(x.shape[0], k=1)
    return float(dist[upper].min())


def diameter(x: FloatArray, domain: Torus | OpenSpace) -> float:
    if x.shape[0] < 2:
        return 0.0
    return float(pairwise_distances(x, domain).max())
