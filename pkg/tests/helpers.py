import math
from pathlib import Path

import numpy as np

from alignment_lab.dynamics import Confinement, EnsembleState, NoForce, Pairwise, SystemSpec, make_state
from alignment_lab.geometry import OpenSpace, Torus
from alignment_lab.model import (
    AnyKernel,
    AnyPotential,
    Constant,
    Plateau,
    QuadraticConfinement,
    SmoothBump,
    ZeroKernel,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

SQRT2 = math.sqrt(2.0)


def torus_system(N: int = 2, n: int = 1, kernel: AnyKernel | None = None, period: float = 2.0 * math.pi) -> SystemSpec:
    return SystemSpec(domain=Torus(n=n, period=period), kernel=kernel or SmoothBump(r0=0.5), N=N, n=n)


def open_system(
    N: int = 2,
    n: int = 1,
    kernel: AnyKernel | None = None,
    confinement: AnyPotential | None = None,
    pairwise: AnyPotential | None = None,
) -> SystemSpec:
    force: NoForce | Confinement | Pairwise = NoForce()
    if confinement is not None:
        force = Confinement(potential=confinement)
    elif pairwise is not None:
        force = Pairwise(potential=pairwise)
    return SystemSpec(domain=OpenSpace(n=n), kernel=kernel or ZeroKernel(), force=force, N=N, n=n)


def harmonic_pair() -> SystemSpec:
    """Two non-communicating agents in U = r^2/2 on the line."""
    return open_system(confinement=QuadraticConfinement())


def locked_pair(amp: float = 1.0) -> tuple[SystemSpec, EnsembleState]:
    """Pair deep inside the flat region of a plateau kernel, with a small relative velocity."""
    system = open_system(kernel=Plateau(amp=amp, r_flat=0.25, r0=0.5))
    return system, make_state([[0.0], [0.05]], [[0.01], [-0.01]], system)


def constant_kernel_system(N: int = 4, n: int = 2) -> SystemSpec:
    return open_system(N=N, n=n, kernel=Constant(amp=1.0))


def random_state(system: SystemSpec, seed: int = 0, spread: float = 1.0) -> EnsembleState:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-spread, spread, size=(system.N, system.n))
    v = rng.standard_normal((system.N, system.n))
    return make_state(x, v, system)
