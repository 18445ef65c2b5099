"""Gravitational N-body workloads, direct and pipelined.

The direct step integrates forces body by body, exactly the classic
quadratic loop: per body, accumulate acceleration from everyone else, then
update velocity and position into fresh buffers and swap. The pipelined
build reproduces the tree-method stage structure (space subdivision, tree
construction, mass centers, force approximation, position update) as a hard
chain of stream entities with a data-parallel force stage; the tree stages
are structural stubs that keep the exact computation, which is the point
here: the concurrency structure, not the approximation.

Both paths compute per-body acceleration through one shared routine, so a
sequential entity run is bit-identical to the direct step for any partition
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .entity import Cardinality, EntityBuilder, KernelRegistry, PortSpec
from .errors import CoincidentBodiesError, ValidationError
from .graph import Hypergraph, build_graph

GRAVITY = 1.0  # natural units
SOFTENING = 1e-9
COINCIDENT_EPS = 1e-9

STAGES = ("space_subdivision", "tree_construction", "mass_center_calc",
          "approximate_force", "position_update")


@dataclass
class BodySet:
    """State of N point masses: positions, velocities, masses, timestep."""

    x: np.ndarray  # (N, 3) positions
    v: np.ndarray  # (N, 3) velocities
    m: np.ndarray  # (N,) masses
    dt: float
    tmax: int = 1

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)
        n = self.m.shape[0]
        if n < 1:
            raise ValidationError("BodySet needs at least one body")
        if self.x.shape != (n, 3) or self.v.shape != (n, 3):
            raise ValidationError(
                f"positions/velocities must be ({n}, 3) arrays")
        if self.dt <= 0:
            raise ValidationError("timestep dt must be positive")
        if self.tmax < 0:
            raise ValidationError("tmax must be >= 0")
        if np.any(self.m <= 0):
            raise ValidationError("masses must be positive")

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def __len__(self) -> int:
        return self.n

    def copy(self) -> "BodySet":
        return BodySet(x=self.x.copy(), v=self.v.copy(), m=self.m.copy(),
                       dt=self.dt, tmax=self.tmax)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BodySet):
            return NotImplemented
        return (np.array_equal(self.x, other.x)
                and np.array_equal(self.v, other.v)
                and np.array_equal(self.m, other.m)
                and self.dt == other.dt and self.tmax == other.tmax)


def random_bodies(n: int, seed: int = 0, dt: float = 1e-3,
                  tmax: int = 1, scale: float = 4.0) -> BodySet:
    rng = np.random.default_rng(seed)
    return BodySet(x=rng.uniform(-scale, scale, size=(n, 3)),
                   v=rng.uniform(-0.1, 0.1, size=(n, 3)),
                   m=rng.uniform(0.5, 1.5, size=n),
                   dt=dt, tmax=tmax)


def _check_coincident(x: np.ndarray, lo: int, hi: int) -> None:
    if hi <= lo:
        return
    diff = x[None, :, :] - x[lo:hi, None, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    for row, j in enumerate(range(lo, hi)):
        d2[row, j] = np.inf
    bad = np.argwhere(d2 < COINCIDENT_EPS ** 2)
    if bad.size:
        row, i = bad[0]
        raise CoincidentBodiesError(
            f"bodies {int(row) + lo} and {int(i)} closer than "
            f"{COINCIDENT_EPS}")


def accel_on(j: int, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Gravitational acceleration on body j from all others, softened."""
    d = x - x[j]
    r2 = np.einsum("ij,ij->i", d, d) + SOFTENING ** 2
    r2[j] = np.inf  # no self-interaction
    w = GRAVITY * m / (r2 * np.sqrt(r2))
    return (d * w[:, None]).sum(axis=0)


def accel_block(x: np.ndarray, m: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Accelerations for bodies lo..hi, row by row through accel_on.

    Partitioning splits the output rows only; each row's interaction sum is
    computed identically for every block layout, which keeps partitioned
    results bit-identical to the unpartitioned ones.
    """
    if hi <= lo:
        return np.zeros((0, 3))
    return np.stack([accel_on(j, x, m) for j in range(lo, hi)])


def gravitational_forces(b: BodySet) -> np.ndarray:
    """(N, 3) forces, i.e. accelerations scaled by each body's mass."""
    _check_coincident(b.x, 0, b.n)
    return accel_block(b.x, b.m, 0, b.n) * b.m[:, None]


def nbody_direct_step(b: BodySet) -> BodySet:
    """One timestep of the quadratic direct method, double buffered."""
    _check_coincident(b.x, 0, b.n)
    a = accel_block(b.x, b.m, 0, b.n)
    vnew = b.v + a * b.dt
    xnew = b.x + vnew * b.dt
    return BodySet(x=xnew, v=vnew, m=b.m.copy(), dt=b.dt, tmax=b.tmax)


def simulate_direct(b: BodySet, steps: int) -> BodySet:
    state = b
    for _ in range(steps):
        state = nbody_direct_step(state)
    return state


# ---------------------------------------------------------------------------
# entity pipeline
# ---------------------------------------------------------------------------

def _k_space_subdivision(ctx) -> np.ndarray:
    state: BodySet = ctx.inputs
    return np.stack([state.x.min(axis=0), state.x.max(axis=0)])


def _k_tree_construction(ctx) -> int:
    state: BodySet = ctx.inputs
    return max(1, int(np.ceil(np.log2(state.n + 1))))


def _k_mass_center(ctx) -> tuple[float, np.ndarray]:
    state: BodySet = ctx.inputs
    total = float(state.m.sum())
    return total, (state.x * state.m[:, None]).sum(axis=0) / total


def _k_approximate_force(ctx) -> np.ndarray:
    state: BodySet = ctx.inputs
    lo, hi = (ctx.part.lo, ctx.part.hi) if ctx.part else (0, state.n)
    _check_coincident(state.x, lo, hi)
    return accel_block(state.x, state.m, lo, hi)


def _k_position_update(ctx) -> BodySet:
    state: BodySet = ctx.inputs
    a = ctx.upstream["approximate_force"]
    vnew = state.v + a * state.dt
    xnew = state.x + vnew * state.dt
    return BodySet(x=xnew, v=vnew, m=state.m.copy(), dt=state.dt,
                   tmax=state.tmax)


def nbody_kernels() -> KernelRegistry:
    reg = KernelRegistry()
    reg.register("space_subdivision", _k_space_subdivision, 1, 1)
    reg.register("tree_construction", _k_tree_construction, 1, 1)
    reg.register("mass_center_calc", _k_mass_center, 1, 1)
    reg.register("approximate_force", _k_approximate_force, 1, 1)
    reg.register("position_update", _k_position_update, 1, 1)
    return reg


def build_nbody_program(b: BodySet, partitions: int = 1,
                        kernels: KernelRegistry | None = None) -> Hypergraph:
    """Per-timestep graph: the five tree-method stages as a hard chain,
    with the force stage expanded into the given number of partitions."""
    if partitions < 1:
        raise ValidationError("partitions must be >= 1")
    partitions = min(partitions, b.n)
    reg = kernels if kernels is not None else nbody_kernels()
    builder = EntityBuilder(reg)
    record_in = (PortSpec("state", "record", Cardinality.STREAM),)
    record_out = (PortSpec("result", "record"),)
    stages = []
    for name in STAGES:
        stages.append(builder.make_entity(
            name, name, inputs=record_in, outputs=record_out,
            partitions=partitions if name == "approximate_force" else None))
    root = stages[0]
    for stage in stages[1:]:
        root = builder.concat(root, stage)
    return build_graph(root)


def nbody_inputs(b: BodySet) -> dict[str, BodySet]:
    """Every stage reads the timestep's state; edges carry ordering and the
    force results flow to the update stage as upstream output."""
    return {name: b for name in STAGES}


@dataclass
class NBodyRunResult:
    final: BodySet
    reports: list = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(len(r.violations) for r in self.reports)


def run_nbody(b: BodySet, steps: int, partitions: int = 1,
              mode: str = "parallel", seed: int = 0,
              cfg=None) -> NBodyRunResult:
    """Drive the entity pipeline for ``steps`` timesteps.

    The hard chain must stay acyclic, so each timestep runs a freshly built
    graph over the previous step's output state.
    """
    from .scheduler import Mode, SchedulerConfig, run_parallel, run_sequential

    kernels = nbody_kernels()
    if cfg is None:
        cfg = SchedulerConfig(seed=seed)
    state = b
    reports = []
    for _ in range(steps):
        g = build_nbody_program(state, partitions, kernels=kernels)
        inputs = nbody_inputs(state)
        if Mode(mode) is Mode.SEQUENTIAL:
            report = run_sequential(g, inputs, seed=seed, kernels=kernels)
        else:
            report = run_parallel(g, inputs, cfg, kernels)
        state = report.outputs["position_update"]
        reports.append(report)
    return NBodyRunResult(final=state, reports=reports)
