"""Synthetic task-parallel workloads: a browser-style rendering pipeline
and flat batches of independent timed tasks.

The rendering pipeline chains three stages (parsing, synthesis, rendering).
Each stage holds several sub-units grouped in parallel and wrapped in a
composite, so one program exercises addition, concatenation, and
composition. Every sub-unit writes its result to its own pre-colored cell.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import reduce

from .entity import EntityBuilder, KernelRegistry, StreamEntity
from .errors import ValidationError
from .graph import Hypergraph, build_graph
from .memguard import OWNER_ENTITY, ColoredCell, Policy


@dataclass(frozen=True)
class StageSpec:
    name: str
    fan_out: int
    cost_ms: float = 1.0

    def __post_init__(self) -> None:
        if self.fan_out < 1:
            raise ValidationError(f"stage '{self.name}': fan_out must be >= 1")
        if self.cost_ms < 0:
            raise ValidationError(f"stage '{self.name}': cost must be >= 0")


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[StageSpec, ...]

    def __post_init__(self) -> None:
        names = [s.name for s in self.stages]
        if len(names) != len(set(names)):
            raise ValidationError("stage names must be unique")

    @property
    def total_subunits(self) -> int:
        return sum(s.fan_out for s in self.stages)


def default_browser_spec(cost_ms: float = 1.0) -> PipelineSpec:
    return PipelineSpec(stages=(
        StageSpec("parsing", fan_out=4, cost_ms=cost_ms),
        StageSpec("synthesis", fan_out=3, cost_ms=cost_ms),
        StageSpec("rendering", fan_out=2, cost_ms=cost_ms),
    ))


def _work_kernel(cost_ms: float):
    def kernel(ctx):
        if cost_ms > 0:
            time.sleep(cost_ms / 1000.0)
        token = f"{ctx.task.entity}:done"
        if ctx.task.entity in ctx.cells:
            ctx.write(ctx.task.entity, token)
        return token

    return kernel


@dataclass
class BuiltPipeline:
    graph: Hypergraph
    kernels: KernelRegistry
    cells: dict[str, ColoredCell]


def build_browser_pipeline(spec: PipelineSpec | None = None) -> BuiltPipeline:
    spec = spec if spec is not None else default_browser_spec()
    kernels = KernelRegistry()
    builder = EntityBuilder(kernels)
    cells: dict[str, ColoredCell] = {}

    stage_roots: list[StreamEntity] = []
    for stage in spec.stages:
        kernels.register(f"work_{stage.name}", _work_kernel(stage.cost_ms))
        subunits = []
        for i in range(stage.fan_out):
            sub_id = f"{stage.name}_{i}"
            subunits.append(builder.make_entity(sub_id, f"work_{stage.name}"))
            cells[sub_id] = ColoredCell(sub_id, policy=Policy.COLOR,
                                        color=(OWNER_ENTITY, sub_id))
        group = reduce(builder.add_parallel, subunits)
        stage_roots.append(builder.compose(stage.name, [group]))

    root = reduce(builder.concat, stage_roots)
    return BuiltPipeline(graph=build_graph(root), kernels=kernels, cells=cells)


def independent_program(n: int, cost_ms: float = 0.0) -> BuiltPipeline:
    """n mutually independent tasks; the scalability smoke workload."""
    if n < 1:
        raise ValidationError("need at least one task")
    kernels = KernelRegistry()
    kernels.register("unit_work", _work_kernel(cost_ms))
    builder = EntityBuilder(kernels)
    entities = [builder.make_entity(f"task_{i:03d}", "unit_work")
                for i in range(n)]
    root = reduce(builder.add_parallel, entities) if n > 1 else entities[0]
    return BuiltPipeline(graph=build_graph(root), kernels=kernels, cells={})
