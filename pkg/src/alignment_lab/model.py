"""Communication kernels phi, radial potentials U and the admissibility check for kernel/potential pairs."""

import math
from typing import Annotated, Literal, Protocol, overload

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize_scalar

from .errors import InvalidState
from .geometry import FloatArray


def _radii(r: ArrayLike) -> FloatArray:
    arr = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidState(f"Non-finite radius: {arr!r}")
    if np.any(arr < 0.0):
        raise InvalidState(f"Radius must be non-negative, got {arr!r}")
    return arr


class _Spec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ---------------------------------------------------------------------------
# Kernels


class SmoothBump(_Spec):
    """phi(r) = amp * exp(1 - 1/(1 - (r/r0)^2)) inside the ball of radius r0."""

    kind: Literal["smooth_bump"] = "smooth_bump"
    r0: float = Field(gt=0.0)
    amp: float = Field(default=1.0, ge=0.0)

    @property
    def support_radius(self) -> float:
        return self.r0

    def value(self, r: FloatArray) -> FloatArray:
        s = r / self.r0
        inside = s < 1.0
        safe = np.where(inside, s, 0.0)
        return np.where(inside, self.amp * np.exp(1.0 - 1.0 / (1.0 - safe**2)), 0.0)

    def deriv(self, r: FloatArray) -> FloatArray:
        s = r / self.r0
        inside = s < 1.0
        safe = np.where(inside, s, 0.0)
        denom = 1.0 - safe**2
        bump = self.amp * np.exp(1.0 - 1.0 / denom)
        return np.where(inside, -bump * 2.0 * safe / (self.r0 * denom**2), 0.0)


class Plateau(_Spec):
    """phi = amp on [0, r_flat], cubic Hermite ramp down to 0 at r0, zero beyond."""

    kind: Literal["plateau"] = "plateau"
    amp: float = Field(ge=0.0)
    r_flat: float = Field(gt=0.0)
    r0: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_ramp(self) -> "Plateau":
        if not self.r_flat < self.r0:
            raise ValueError(f"Plateau needs 0 < r_flat < r0, got r_flat={self.r_flat}, r0={self.r0}")
        return self

    @property
    def support_radius(self) -> float:
        return self.r0

    def _ramp(self, r: FloatArray) -> FloatArray:
        return np.clip((r - self.r_flat) / (self.r0 - self.r_flat), 0.0, 1.0)

    def value(self, r: FloatArray) -> FloatArray:
        u = self._ramp(r)
        return self.amp * (2.0 * u**3 - 3.0 * u**2 + 1.0)

    def deriv(self, r: FloatArray) -> FloatArray:
        u = self._ramp(r)
        return self.amp * (6.0 * u**2 - 6.0 * u) / (self.r0 - self.r_flat)


class Constant(_Spec):
    kind: Literal["constant"] = "constant"
    amp: float = Field(default=1.0, ge=0.0)

    @property
    def support_radius(self) -> float:
        return math.inf

    def value(self, r: FloatArray) -> FloatArray:
        return np.full_like(r, self.amp, dtype=np.float64)

    def deriv(self, r: FloatArray) -> FloatArray:
        return np.zeros_like(r, dtype=np.float64)


class PowerTail(_Spec):
    """phi(r) = amp * (1 + r^2)^(-exponent/2); heavy-tailed for exponent <= 1."""

    kind: Literal["power_tail"] = "power_tail"
    amp: float = Field(default=1.0, ge=0.0)
    exponent: float = Field(default=0.5, ge=0.0)

    @property
    def support_radius(self) -> float:
        return math.inf

    def value(self, r: FloatArray) -> FloatArray:
        return self.amp * (1.0 + r**2) ** (-0.5 * self.exponent)

    def deriv(self, r: FloatArray) -> FloatArray:
        return -self.exponent * self.amp * r * (1.0 + r**2) ** (-0.5 * self.exponent - 1.0)


class ZeroKernel(_Spec):
    kind: Literal["zero"] = "zero"

    @property
    def support_radius(self) -> float:
        return 0.0

    def value(self, r: FloatArray) -> FloatArray:
        return np.zeros_like(r, dtype=np.float64)

    def deriv(self, r: FloatArray) -> FloatArray:
        return np.zeros_like(r, dtype=np.float64)


KernelSpec = Annotated[SmoothBump | Plateau | Constant | PowerTail | ZeroKernel, Field(discriminator="kind")]


def kernel_peak(kernel: SmoothBump | Plateau | Constant | PowerTail | ZeroKernel) -> float:
    """sup phi; every kernel variant attains it at r = 0."""
    return 0.0 if isinstance(kernel, ZeroKernel) else kernel.amp


# ---------------------------------------------------------------------------
# Potentials


class NoPotential(_Spec):
    kind: Literal["none"] = "none"

    def value(self, r: FloatArray) -> FloatArray:
        return np.zeros_like(r, dtype=np.float64)

    def deriv(self, r: FloatArray) -> FloatArray:
        return np.zeros_like(r, dtype=np.float64)


class QuadraticConfinement(_Spec):
    """U(r) = r^2 / 2."""

    kind: Literal["quadratic_confinement"] = "quadratic_confinement"

    def value(self, r: FloatArray) -> FloatArray:
        return 0.5 * r**2

    def deriv(self, r: FloatArray) -> FloatArray:
        return np.array(r, dtype=np.float64, copy=True)


class QuadraticWell(_Spec):
    """U(r) = (r - ell0)_+^2: flat well on [0, ell0], quadratic attraction beyond.

    With ``delta`` set, the first ``delta`` past the well is a cubic bridge
    s^3 / (3 delta) (s = r - ell0) joined to s^2 - s delta + delta^2 / 3, which
    makes U twice continuously differentiable. The bridged well violates the
    quadratic contact condition near ell0 (U' ^ 2 / U ~ 3 s / delta there).
    """

    kind: Literal["quadratic_well"] = "quadratic_well"
    ell0: float = Field(gt=0.0)
    delta: float | None = Field(default=None, gt=0.0)

    @property
    def well(self) -> tuple[float, float]:
        return (0.0, self.ell0)

    def value(self, r: FloatArray) -> FloatArray:
        s = np.maximum(r - self.ell0, 0.0)
        if self.delta is None:
            return s**2
        d = self.delta
        return np.where(s < d, s**3 / (3.0 * d), s**2 - s * d + d**2 / 3.0)

    def deriv(self, r: FloatArray) -> FloatArray:
        s = np.maximum(r - self.ell0, 0.0)
        if self.delta is None:
            return 2.0 * s
        d = self.delta
        return np.where(s < d, s**2 / d, 2.0 * s - d)


class IntervalWell(_Spec):
    """3Zone potential: repulsion below ell0, zero on [ell0, ell1], attraction above ell1."""

    kind: Literal["interval_well"] = "interval_well"
    ell0: float = Field(gt=0.0)
    ell1: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_order(self) -> "IntervalWell":
        if self.ell1 < self.ell0:
            raise ValueError(f"IntervalWell needs ell0 <= ell1, got ell0={self.ell0}, ell1={self.ell1}")
        return self

    @property
    def well(self) -> tuple[float, float]:
        return (self.ell0, self.ell1)

    def value(self, r: FloatArray) -> FloatArray:
        return np.where(r < self.ell0, (self.ell0 - r) ** 2, np.where(r > self.ell1, (r - self.ell1) ** 2, 0.0))

    def deriv(self, r: FloatArray) -> FloatArray:
        return np.where(r < self.ell0, 2.0 * (r - self.ell0), np.where(r > self.ell1, 2.0 * (r - self.ell1), 0.0))


class PowerWell(_Spec):
    """U(r) = |r - ell|^exponent; exponents above 2 have higher than quadratic contact at the well."""

    kind: Literal["power_well"] = "power_well"
    ell: float = Field(ge=0.0)
    exponent: float = Field(default=2.0, ge=2.0)

    @property
    def well(self) -> tuple[float, float]:
        return (self.ell, self.ell)

    def value(self, r: FloatArray) -> FloatArray:
        return np.abs(r - self.ell) ** self.exponent

    def deriv(self, r: FloatArray) -> FloatArray:
        gap = r - self.ell
        return self.exponent * np.sign(gap) * np.abs(gap) ** (self.exponent - 1.0)


PotentialSpec = Annotated[
    NoPotential | QuadraticConfinement | QuadraticWell | IntervalWell | PowerWell,
    Field(discriminator="kind"),
]

AnyKernel = SmoothBump | Plateau | Constant | PowerTail | ZeroKernel
AnyPotential = NoPotential | QuadraticConfinement | QuadraticWell | IntervalWell | PowerWell


def potential_well(potential: AnyPotential) -> tuple[float, float]:
    """Radial interval on which U vanishes; the origin for confinement-type potentials."""
    if isinstance(potential, QuadraticWell | IntervalWell | PowerWell):
        return potential.well
    return (0.0, 0.0)


# ---------------------------------------------------------------------------
# Evaluation entry points


@overload
def kernel_eval(kernel: AnyKernel, r: float) -> float: ...
@overload
def kernel_eval(kernel: AnyKernel, r: FloatArray) -> FloatArray: ...
def kernel_eval(kernel: AnyKernel, r: float | FloatArray) -> float | FloatArray:
    out = kernel.value(_radii(r))
    return float(out) if np.ndim(out) == 0 else out


@overload
def kernel_deriv(kernel: AnyKernel, r: float) -> float: ...
@overload
def kernel_deriv(kernel: AnyKernel, r: FloatArray) -> FloatArray: ...
def kernel_deriv(kernel: AnyKernel, r: float | FloatArray) -> float | FloatArray:
    out = kernel.deriv(_radii(r))
    return float(out) if np.ndim(out) == 0 else out


@overload
def potential_eval(potential: AnyPotential, r: float) -> float: ...
@overload
def potential_eval(potential: AnyPotential, r: FloatArray) -> FloatArray: ...
def potential_eval(potential: AnyPotential, r: float | FloatArray) -> float | FloatArray:
    out = potential.value(_radii(r))
    return float(out) if np.ndim(out) == 0 else out


def potential_grad(potential: AnyPotential, x: ArrayLike) -> FloatArray:
    """Radial gradient U'(|x|) x/|x| along the last axis; zero at the origin."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidState(f"Non-finite position: {arr!r}")
    if isinstance(potential, NoPotential):
        return np.zeros_like(arr)
    r = np.sqrt(np.sum(arr**2, axis=-1, keepdims=True))
    positive = r > 0.0
    safe_r = np.where(positive, r, 1.0)
    return np.where(positive, potential.deriv(safe_r) * arr / safe_r, 0.0)


# ---------------------------------------------------------------------------
# Admissibility of (phi, U) pairs


class RadialProfile(Protocol):
    """Anything radial that can be evaluated together with its first derivative."""

    def value(self, r: FloatArray) -> FloatArray: ...

    def deriv(self, r: FloatArray) -> FloatArray: ...


class ValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    radius: float
    grid: int
    tolerance: float
    sign_condition_ok: bool
    worst_sign_product: float
    worst_sign_radius: float | None
    c_R: float | None
    c_R_radius: float | None
    contact_condition_ok: bool

    @property
    def ok(self) -> bool:
        return self.sign_condition_ok and self.contact_condition_ok


def _contact_probes(potential: RadialProfile, radii: FloatArray, values: FloatArray, radius: float) -> FloatArray:
    """Radii approaching each local minimum of U geometrically from both sides.

    A grid alone cannot resolve |U'|^2/U -> 0 at a contact of order above two.
    """
    step = radii[1] - radii[0]
    left, mid, right = values[:-2], values[1:-1], values[2:]
    interior = np.flatnonzero((mid <= left) & (mid <= right) & ((mid < left) | (mid < right))) + 1
    probes: list[float] = []
    for k in interior:
        lo, hi = radii[k - 1], radii[k + 1]
        found = minimize_scalar(
            lambda s: float(potential.value(np.array(s))),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13},
        )
        center = float(found.x)
        for power in range(1, 9):
            offset = step * 10.0**-power
            probes.extend(p for p in (center - offset, center + offset) if 0.0 <= p <= radius)
    return np.array(probes, dtype=np.float64)


def validate_pair(
    kernel: RadialProfile,
    potential: RadialProfile,
    radius: float,
    grid: int = 10_000,
    tolerance: float = 1e-12,
) -> ValidationReport:
    """Check U'(r) phi'(r) <= 0 and the quadratic-contact bound |U'|^2 >= c_R U on [0, radius]."""
    if radius <= 0.0:
        raise InvalidState(f"Validation radius must be positive, got {radius}")
    if grid < 100:
        raise InvalidState(f"Validation grid needs at least 100 points, got {grid}")

    radii = np.linspace(0.0, radius, grid)
    products = np.asarray(potential.deriv(radii) * kernel.deriv(radii), dtype=np.float64)
    worst = int(np.argmax(products))
    sign_ok = bool(products[worst] <= tolerance)

    values = np.asarray(potential.value(radii), dtype=np.float64)
    sample = np.concatenate([radii, _contact_probes(potential, radii, values, radius)])
    u = np.asarray(potential.value(sample), dtype=np.float64)
    du = np.asarray(potential.deriv(sample), dtype=np.float64)
    positive = u > 0.0
    if np.any(positive):
        ratios = du[positive] ** 2 / u[positive]
        at = int(np.argmin(ratios))
        c_r: float | None = float(ratios[at])
        c_r_radius: float | None = float(sample[positive][at])
    else:
        c_r, c_r_radius = None, None

    return ValidationReport(
        radius=radius,
        grid=grid,
        tolerance=tolerance,
        sign_condition_ok=sign_ok,
        worst_sign_product=float(products[worst]),
        worst_sign_radius=float(radii[worst]) if not sign_ok else None,
        c_R=c_r,
        c_R_radius=c_r_radius,
        contact_condition_ok=c_r is None or c_r >= tolerance,
    )
