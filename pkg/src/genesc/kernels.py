"""Standard kernel library for manifest-driven programs.

Manifests bind kernels by name only; the host registers the callables.
These are self-contained kernels useful for wiring up and testing programs
without writing host code.
"""

from __future__ import annotations

import hashlib
import time
from typing import Any

from .entity import KernelRegistry


def stable_digest(value: Any) -> str:
    """Content digest that is stable across processes and hash seeds."""
    h = hashlib.blake2b(digest_size=8)
    h.update(_canonical(value).encode("utf-8"))
    return h.hexdigest()


def _canonical(value: Any) -> str:
    if isinstance(value, dict):
        inner = ",".join(f"{_canonical(k)}:{_canonical(value[k])}"
                         for k in sorted(value, key=repr))
        return "{" + inner + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return repr(value)


def k_noop(ctx) -> None:
    return None


def k_source(ctx) -> str:
    """Emit a token naming this task; a leaf data producer."""
    return f"{ctx.task.entity}#{ctx.task.instance}"


def k_combine(ctx) -> str:
    """Deterministic function of the hard-predecessor outputs."""
    payload = {
        "entity": ctx.task.entity,
        "inputs": ctx.inputs,
        "upstream": {k: ctx.upstream[k] for k in sorted(ctx.upstream)},
    }
    return stable_digest(payload)


def k_work_1ms(ctx) -> str:
    time.sleep(0.001)
    return f"{ctx.task.entity}:done"


def k_fail(ctx) -> None:
    raise RuntimeError(f"kernel 'fail' invoked by {ctx.task.entity}")


def standard_kernels() -> KernelRegistry:
    reg = KernelRegistry()
    reg.register("noop", k_noop)
    reg.register("source", k_source)
    reg.register("combine", k_combine)
    reg.register("work_1ms", k_work_1ms)
    reg.register("fail", k_fail)
    return reg
