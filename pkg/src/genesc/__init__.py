"""genesc: a stream-entity concurrency runtime.

Programs are hypergraphs of stream entities (kernel, typed ports, precedence
relations) executed by a precedence-aware work-stealing pool, guarded by
memory coloring, and reducible to deterministic sequential execution.
"""

from .entity import (
    AUTO_PARTITIONS,
    Cardinality,
    DATATYPES,
    Direction,
    EntityBuilder,
    KernelRef,
    KernelRegistry,
    PortSpec,
    RelationConstraint,
    StreamEntity,
    Strength,
    Wire,
    Wiring,
)
from .errors import (
    ArityMismatchError,
    BadMagicError,
    ChecksumMismatchError,
    CoincidentBodiesError,
    ColorViolationSignal,
    CyclicHardConstraintsError,
    DanglingWireError,
    DuplicateDeclarationError,
    DuplicateIdError,
    GenescError,
    IdCollisionError,
    InputShapeMismatchError,
    IoFailureError,
    KernelPanicError,
    ManifestError,
    ManifestSyntaxError,
    PortTypeMismatchError,
    SegmentError,
    SelfRelationError,
    TimestampDomainMismatchError,
    TruncatedRecordError,
    UnknownDatatypeError,
    UnknownKernelError,
    UnknownTaskInTraceError,
    UnresolvedNameError,
    UnresolvedRelationTargetError,
    ValidationError,
    VersionUnsupportedError,
)
from .graph import (
    AnalysisReport,
    EdgeKind,
    HyperEdge,
    Hypergraph,
    ValidationReport,
    analyze,
    build_graph,
    edge,
    flatten,
    structurally_equal,
    topological_order,
    validate_hard_acyclic,
)
from .manifest import (
    EntityDecl,
    ManifestDoc,
    emit_graph_segment,
    load_graph_segment,
    load_graph_segment_file,
    load_manifest_program,
    manifest_roots,
    parse_manifest,
    parse_manifest_doc,
    save_graph_segment,
)
from .memguard import (
    ColoredCell,
    MemGuard,
    Policy,
    RaceClass,
    RacePair,
    RaceReport,
    analyze_races,
)
from .scheduler import (
    KernelContext,
    Mode,
    Partition,
    RunReport,
    SchedulerConfig,
    Task,
    partition_map,
    resize_pool,
    run_parallel,
    run_sequential,
)
from .diagnostics import (
    CoreDump,
    Violation,
    dump_core,
    load_core_dump,
    summarize_dump,
    verify_trace,
)
from .tracing import (
    AccessEvent,
    AccessKind,
    EventClock,
    EventKind,
    ExecutionTrace,
    TaskState,
    TraceEvent,
    read_trace_tsv,
    write_trace_tsv,
)
from .nbody import (
    BodySet,
    build_nbody_program,
    nbody_direct_step,
    nbody_inputs,
    nbody_kernels,
    random_bodies,
    run_nbody,
    simulate_direct,
)
from .pipeline import (
    BuiltPipeline,
    PipelineSpec,
    StageSpec,
    build_browser_pipeline,
    default_browser_spec,
    independent_program,
)
from .kernels import standard_kernels
from .cli import cli_main

__version__ = "0.1.0"
