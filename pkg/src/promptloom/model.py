"""Chain data model: layers, entries, steps, chains, and structural edits.

Chains and steps are immutable values; edits produce new chains. Mutable
run-time data (entries, run history) lives in ``promptloom.executor.ChainState``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence


class Mapping_(Enum):
    ONE_TO_ONE = "1-1"
    ONE_TO_MANY = "1-N"
    MANY_TO_ONE = "N-1"


class OperationKind(Enum):
    """The eight primitive LLM operations."""

    CLASSIFICATION = "classification"
    FACTUAL_QUERY = "factual_query"
    GENERATION = "generation"
    IDEATION = "ideation"
    INFORMATION_EXTRACTION = "information_extraction"
    REWRITING = "rewriting"
    SPLIT_POINTS = "split_points"
    COMPOSE_POINTS = "compose_points"

    @property
    def mapping(self) -> Mapping_:
        if self in (OperationKind.SPLIT_POINTS, OperationKind.IDEATION):
            return Mapping_.ONE_TO_MANY
        if self is OperationKind.COMPOSE_POINTS:
            return Mapping_.MANY_TO_ONE
        return Mapping_.ONE_TO_ONE


class Cardinality(Enum):
    SINGLE = "single"
    LIST = "list"


class Origin(Enum):
    MODEL = "model"
    USER = "user"
    SEED = "seed"


class GroupScope(Enum):
    PER_LINEAGE = "per_lineage"
    GLOBAL = "global"


@dataclass(frozen=True)
class DataLayer:
    """A named slot for values flowing between steps."""

    id: str
    name: str
    cardinality: Cardinality = Cardinality.SINGLE
    color_tag: int = 0
    producer: Optional[str] = None  # step id; None for root layers
    is_root: bool = False


@dataclass
class DataEntry:
    """One text value in a layer, with provenance lineage and flags."""

    id: str
    layer: str
    text: str
    lineage: tuple[str, ...] = ()  # ancestor entry ids, root to parent
    frozen: bool = False
    stale: bool = False
    origin: Origin = Origin.MODEL
    created_seq: int = 0  # state-local creation counter, for staleness audits

    @property
    def path(self) -> tuple[str, ...]:
        """Full lineage path including this entry's own id."""
        return self.lineage + (self.id,)


@dataclass(frozen=True)
class BranchCondition:
    """Gate a step on the label produced by an upstream Classification step."""

    guard_layer: str
    equals_label: str

    def matches(self, text: str) -> bool:
        return text.strip().lower() == self.equals_label.strip().lower()


@dataclass(frozen=True)
class Step:
    """One primitive operation with its prompt configuration and wiring."""

    id: str
    op: OperationKind
    inputs: tuple[str, ...]
    output: str
    task_description: str = ""
    prefixes: Mapping[str, str] = field(default_factory=dict)  # layer id -> prefix override
    few_shot: tuple[Mapping[str, str], ...] = ()  # each maps layer id -> example text
    temperature: Optional[float] = None  # None -> operation default
    branch: Optional[BranchCondition] = None
    group_scope: Optional[GroupScope] = None  # None -> op default


@dataclass(frozen=True)
class Chain:
    """A DAG of steps connected by data layers."""

    id: str
    name: str
    layers: tuple[DataLayer, ...]
    steps: tuple[Step, ...]

    def layer(self, layer_id: str) -> DataLayer:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def step(self, step_id: str) -> Step:
        for step in self.steps:
            if step.id == step_id:
                return step
        raise KeyError(step_id)

    def has_layer(self, layer_id: str) -> bool:
        return any(l.id == layer_id for l in self.layers)

    def has_step(self, step_id: str) -> bool:
        return any(s.id == step_id for s in self.steps)

    @property
    def root_layers(self) -> tuple[DataLayer, ...]:
        return tuple(l for l in self.layers if l.is_root)

    def consumers(self, layer_id: str) -> tuple[Step, ...]:
        return tuple(s for s in self.steps if layer_id in s.inputs)

    def leaf_layers(self) -> tuple[DataLayer, ...]:
        """Layers no step consumes (terminal outputs)."""
        consumed = {lid for s in self.steps for lid in s.inputs}
        guarded = {s.branch.guard_layer for s in self.steps if s.branch}
        return tuple(
            l for l in self.layers if l.id not in consumed and l.id not in guarded
        )


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


ValidationReport = list


class CycleDetected(Exception):
    pass


def _step_dependencies(chain: Chain, step: Step) -> set[str]:
    """Ids of steps that must run before ``step`` (data inputs + branch guard)."""
    layer_ids = set(step.inputs)
    if step.branch is not None:
        layer_ids.add(step.branch.guard_layer)
    deps = set()
    for lid in layer_ids:
        try:
            layer = chain.layer(lid)
        except KeyError:
            continue
        if layer.producer is not None:
            deps.add(layer.producer)
    return deps


def validate_chain(chain: Chain) -> ValidationReport:
    """Return every invariant violation; an empty report means valid."""
    report: list[Violation] = []

    seen_ids: set[str] = set()
    seen_names: set[str] = set()
    for layer in chain.layers:
        if layer.id in seen_ids:
            report.append(Violation("DuplicateLayerId", layer.id, f"layer id {layer.id!r} repeated"))
        seen_ids.add(layer.id)
        if not layer.name:
            report.append(Violation("EmptyLayerName", layer.id, f"layer {layer.id!r} has an empty name"))
        elif layer.name in seen_names:
            report.append(Violation("DuplicateLayerName", layer.id, f"layer name {layer.name!r} repeated"))
        seen_names.add(layer.name)

        if layer.is_root == (layer.producer is not None):
            report.append(
                Violation(
                    "RootProducerConflict",
                    layer.id,
                    f"layer {layer.id!r} must be a root XOR have a producer",
                )
            )
        if layer.producer is not None:
            if not chain.has_step(layer.producer):
                report.append(
                    Violation("UnknownProducer", layer.id, f"layer {layer.id!r} names missing step {layer.producer!r}")
                )
            elif chain.step(layer.producer).output != layer.id:
                report.append(
                    Violation(
                        "ProducerMismatch",
                        layer.id,
                        f"layer {layer.id!r} lists producer {layer.producer!r} whose output differs",
                    )
                )

    seen_step_ids: set[str] = set()
    for step in chain.steps:
        if step.id in seen_step_ids:
            report.append(Violation("DuplicateStepId", step.id, f"step id {step.id!r} repeated"))
        seen_step_ids.add(step.id)

        for lid in step.inputs:
            if not chain.has_layer(lid):
                report.append(Violation("UnknownInput", step.id, f"step {step.id!r} reads missing layer {lid!r}"))
        if not chain.has_layer(step.output):
            report.append(Violation("UnknownOutput", step.id, f"step {step.id!r} writes missing layer {step.output!r}"))
        else:
            out = chain.layer(step.output)
            if out.producer != step.id:
                report.append(
                    Violation(
                        "OutputNotOwned",
                        step.id,
                        f"step {step.id!r} writes layer {step.output!r} whose producer is {out.producer!r}",
                    )
                )
            mapping = step.op.mapping
            if mapping is Mapping_.ONE_TO_MANY and out.cardinality is not Cardinality.LIST:
                report.append(
                    Violation("CardinalityMismatch", step.id, f"{step.op.value} step {step.id!r} needs a list output")
                )
            if mapping is Mapping_.ONE_TO_ONE and out.cardinality is not Cardinality.SINGLE:
                report.append(
                    Violation("CardinalityMismatch", step.id, f"{step.op.value} step {step.id!r} needs a single output")
                )
        if step.op is OperationKind.COMPOSE_POINTS:
            list_inputs = [
                lid
                for lid in step.inputs
                if chain.has_layer(lid) and chain.layer(lid).cardinality is Cardinality.LIST
            ]
            if not list_inputs:
                report.append(
                    Violation("CardinalityMismatch", step.id, f"compose step {step.id!r} needs a list input")
                )

        referenced = set(step.prefixes)
        for example in step.few_shot:
            referenced.update(example)
        allowed = set(step.inputs) | {step.output}
        for lid in sorted(referenced - allowed):
            report.append(
                Violation("DanglingReference", step.id, f"step {step.id!r} references unwired layer {lid!r}")
            )

        if step.temperature is not None and not (0.0 <= step.temperature <= 1.0):
            report.append(Violation("BadTemperature", step.id, f"step {step.id!r} temperature out of [0,1]"))

        if step.branch is not None:
            guard = step.branch.guard_layer
            if not chain.has_layer(guard):
                report.append(Violation("UnknownGuard", step.id, f"step {step.id!r} guards on missing layer {guard!r}"))
            else:
                producer = chain.layer(guard).producer
                if producer is None or (
                    chain.has_step(producer) and chain.step(producer).op is not OperationKind.CLASSIFICATION
                ):
                    report.append(
                        Violation(
                            "GuardNotClassification",
                            step.id,
                            f"guard layer {guard!r} is not produced by a classification step",
                        )
                    )

    # Acyclicity over producer->consumer edges (branch guards included).
    try:
        topological_order(chain, _validated=False)
    except CycleDetected as exc:
        report.append(Violation("CycleDetected", str(exc), "producer/consumer graph has a cycle"))

    # Reachability: every step's inputs trace back to root layers.
    reachable = {l.id for l in chain.layers if l.is_root}
    changed = True
    while changed:
        changed = False
        for step in chain.steps:
            if step.output in reachable or not chain.has_layer(step.output):
                continue
            if all(lid in reachable for lid in step.inputs if chain.has_layer(lid)):
                reachable.add(step.output)
                changed = True
    for step in chain.steps:
        for lid in step.inputs:
            if chain.has_layer(lid) and lid not in reachable:
                report.append(
                    Violation("UnreachableInput", step.id, f"step {step.id!r} input {lid!r} is not fed from any root")
                )

    return report


def topological_order(chain: Chain, _validated: bool = True) -> list[str]:
    """Step ids in execution order; ties broken lexicographically by id."""
    deps = {step.id: _step_dependencies(chain, step) for step in chain.steps}
    dependents: dict[str, set[str]] = {sid: set() for sid in deps}
    for sid, ds in deps.items():
        for d in ds:
            if d in dependents:
                dependents[d].add(sid)

    ready = [sid for sid, ds in deps.items() if not ds]
    heapq.heapify(ready)
    order: list[str] = []
    remaining = {sid: len(ds) for sid, ds in deps.items()}
    while ready:
        sid = heapq.heappop(ready)
        order.append(sid)
        for dep in sorted(dependents[sid]):
            remaining[dep] -= 1
            if remaining[dep] == 0:
                heapq.heappush(ready, dep)
    if len(order) != len(chain.steps):
        stuck = sorted(set(deps) - set(order))
        raise CycleDetected(", ".join(stuck))
    return order


# ---------------------------------------------------------------------------
# Structural edits


class EditKind(Enum):
    ADD_STEP = "add_step"
    REMOVE_STEP = "remove_step"
    ADD_LAYER = "add_layer"
    REMOVE_LAYER = "remove_layer"
    RENAME_LAYER = "rename_layer"
    REWIRE = "rewire"
    SET_TEMPERATURE = "set_temperature"
    SET_TASK_DESCRIPTION = "set_task_description"
    SET_BRANCH = "set_branch"


@dataclass(frozen=True)
class StructuralEdit:
    kind: EditKind
    # payload per kind; unused fields stay None
    step: Optional[Step] = None
    layer: Optional[DataLayer] = None
    step_id: Optional[str] = None
    layer_id: Optional[str] = None
    name: Optional[str] = None
    inputs: Optional[tuple[str, ...]] = None
    output: Optional[str] = None
    temperature: Optional[float] = None
    text: Optional[str] = None
    branch: Optional[BranchCondition] = None
    clear_branch: bool = False


class EditRejected(Exception):
    """An edit that would violate a chain invariant; the chain is unchanged."""

    def __init__(self, reason: str, report: Optional[ValidationReport] = None):
        super().__init__(reason)
        self.reason = reason
        self.report = report or []


def _with(chain: Chain, layers=None, steps=None) -> Chain:
    return replace(
        chain,
        layers=tuple(layers) if layers is not None else chain.layers,
        steps=tuple(steps) if steps is not None else chain.steps,
    )


def apply_edit(chain: Chain, edit: StructuralEdit) -> Chain:
    """Apply a structural edit, returning a new valid chain or raising EditRejected."""
    candidate = _build_candidate(chain, edit)
    report = validate_chain(candidate)
    if report:
        # A cycle is the most load-bearing violation; name it over secondary
        # fallout like dangling prefix references.
        cycle = next((v for v in report if v.code == "CycleDetected"), None)
        raise EditRejected((cycle or report[0]).code, report)
    return candidate


def _build_candidate(chain: Chain, edit: StructuralEdit) -> Chain:
    kind = edit.kind
    if kind is EditKind.ADD_STEP:
        if edit.step is None:
            raise EditRejected("MissingPayload")
        if chain.has_step(edit.step.id):
            raise EditRejected("DuplicateStepId")
        layers = list(chain.layers)
        if edit.layer is not None:
            if chain.has_layer(edit.layer.id):
                raise EditRejected("DuplicateLayerId")
            layers.append(edit.layer)
        return _with(chain, layers=layers, steps=list(chain.steps) + [edit.step])

    if kind is EditKind.REMOVE_STEP:
        if edit.step_id is None or not chain.has_step(edit.step_id):
            raise EditRejected("UnknownStep")
        step = chain.step(edit.step_id)
        steps = [s for s in chain.steps if s.id != edit.step_id]
        # Removing a step also removes its output layer when requested via
        # layer_id; otherwise the output layer must not be left dangling.
        layers = list(chain.layers)
        if edit.layer_id is not None:
            if edit.layer_id != step.output:
                raise EditRejected("LayerNotOwned")
            layers = [l for l in layers if l.id != edit.layer_id]
        return _with(chain, layers=layers, steps=steps)

    if kind is EditKind.ADD_LAYER:
        if edit.layer is None:
            raise EditRejected("MissingPayload")
        if chain.has_layer(edit.layer.id):
            raise EditRejected("DuplicateLayerId")
        return _with(chain, layers=list(chain.layers) + [edit.layer])

    if kind is EditKind.REMOVE_LAYER:
        if edit.layer_id is None or not chain.has_layer(edit.layer_id):
            raise EditRejected("UnknownLayer")
        for step in chain.steps:
            if edit.layer_id in step.inputs or step.output == edit.layer_id or (
                step.branch is not None and step.branch.guard_layer == edit.layer_id
            ):
                raise EditRejected("LayerInUse")
        return _with(chain, layers=[l for l in chain.layers if l.id != edit.layer_id])

    if kind is EditKind.RENAME_LAYER:
        if edit.layer_id is None or not chain.has_layer(edit.layer_id):
            raise EditRejected("UnknownLayer")
        if not edit.name:
            raise EditRejected("EmptyLayerName")
        layers = [
            replace(l, name=edit.name) if l.id == edit.layer_id else l for l in chain.layers
        ]
        return _with(chain, layers=layers)

    if edit.step_id is None or not chain.has_step(edit.step_id):
        raise EditRejected("UnknownStep")
    step = chain.step(edit.step_id)

    if kind is EditKind.REWIRE:
        new_inputs = edit.inputs if edit.inputs is not None else step.inputs
        new_output = edit.output if edit.output is not None else step.output
        steps = []
        for s in chain.steps:
            if s.id == step.id:
                s = replace(s, inputs=tuple(new_inputs), output=new_output)
            steps.append(s)
        layers = []
        for l in chain.layers:
            if l.id == step.output and new_output != step.output:
                raise EditRejected("OutputDetach")  # no implicit layer rewiring
            if l.id == new_output and l.producer != step.id:
                l = replace(l, producer=step.id, is_root=False)
            layers.append(l)
        return _with(chain, layers=layers, steps=steps)

    if kind is EditKind.SET_TEMPERATURE:
        return _replace_step(chain, step.id, temperature=edit.temperature)
    if kind is EditKind.SET_TASK_DESCRIPTION:
        return _replace_step(chain, step.id, task_description=edit.text or "")
    if kind is EditKind.SET_BRANCH:
        branch = None if edit.clear_branch else edit.branch
        return _replace_step(chain, step.id, branch=branch)

    raise EditRejected("UnknownEditKind")


def _replace_step(chain: Chain, step_id: str, **changes) -> Chain:
    steps = [replace(s, **changes) if s.id == step_id else s for s in chain.steps]
    return _with(chain, steps=steps)


def invert_edit(chain: Chain, edit: StructuralEdit) -> StructuralEdit:
    """The edit that restores ``chain`` after ``edit`` was applied to it."""
    kind = edit.kind
    if kind is EditKind.ADD_STEP:
        return StructuralEdit(
            EditKind.REMOVE_STEP,
            step_id=edit.step.id,
            layer_id=edit.layer.id if edit.layer is not None else None,
        )
    if kind is EditKind.REMOVE_STEP:
        step = chain.step(edit.step_id)
        layer = chain.layer(edit.layer_id) if edit.layer_id is not None else None
        return StructuralEdit(EditKind.ADD_STEP, step=step, layer=layer)
    if kind is EditKind.ADD_LAYER:
        return StructuralEdit(EditKind.REMOVE_LAYER, layer_id=edit.layer.id)
    if kind is EditKind.REMOVE_LAYER:
        return StructuralEdit(EditKind.ADD_LAYER, layer=chain.layer(edit.layer_id))
    if kind is EditKind.RENAME_LAYER:
        return StructuralEdit(
            EditKind.RENAME_LAYER, layer_id=edit.layer_id, name=chain.layer(edit.layer_id).name
        )
    step = chain.step(edit.step_id)
    if kind is EditKind.REWIRE:
        return StructuralEdit(EditKind.REWIRE, step_id=step.id, inputs=step.inputs, output=step.output)
    if kind is EditKind.SET_TEMPERATURE:
        return StructuralEdit(EditKind.SET_TEMPERATURE, step_id=step.id, temperature=step.temperature)
    if kind is EditKind.SET_TASK_DESCRIPTION:
        return StructuralEdit(EditKind.SET_TASK_DESCRIPTION, step_id=step.id, text=step.task_description)
    if kind is EditKind.SET_BRANCH:
        if step.branch is None:
            return StructuralEdit(EditKind.SET_BRANCH, step_id=step.id, clear_branch=True)
        return StructuralEdit(EditKind.SET_BRANCH, step_id=step.id, branch=step.branch)
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# Lineage grouping


class OrphanEntry(Exception):
    pass


@dataclass(frozen=True)
class LineageGroup:
    """The set of input entries one running block consumes."""

    entries: tuple[DataEntry, ...]  # sorted by lineage path
    representative: tuple[str, ...]  # lineage of outputs produced from this group

    def entries_for(self, layer_id: str) -> tuple[DataEntry, ...]:
        return tuple(e for e in self.entries if e.layer == layer_id)


def _is_prefix(a: Sequence[str], b: Sequence[str]) -> bool:
    return len(a) <= len(b) and tuple(b[: len(a)]) == tuple(a)


def _common_prefix(paths: Iterable[tuple[str, ...]]) -> tuple[str, ...]:
    paths = list(paths)
    if not paths:
        return ()
    prefix = paths[0]
    for p in paths[1:]:
        i = 0
        while i < len(prefix) and i < len(p) and prefix[i] == p[i]:
            i += 1
        prefix = prefix[:i]
    return prefix


def group_lineages(
    entries_by_layer: Mapping[str, Sequence[DataEntry]],
    scope: GroupScope,
    known_ids: Optional[set[str]] = None,
) -> list[LineageGroup]:
    """Join input entries into running-block groups.

    PerLineage joins entries from different layers iff one's path is a prefix
    of the other's; each maximal join is one group. Global yields a single
    group of all entries. Order is deterministic: by lineage path, then id.
    """
    entries = [e for layer in sorted(entries_by_layer) for e in entries_by_layer[layer]]
    if known_ids is not None:
        for e in entries:
            for ancestor in e.lineage:
                if ancestor not in known_ids:
                    raise OrphanEntry(f"entry {e.id!r} lineage references missing {ancestor!r}")

    if scope is GroupScope.GLOBAL:
        ordered = tuple(sorted(entries, key=lambda e: e.path))
        return [LineageGroup(ordered, _common_prefix(e.path for e in ordered))] if ordered else []

    drivers = [
        e
        for e in entries
        if not any(o is not e and _is_prefix(e.path, o.path) and len(o.path) > len(e.path) for o in entries)
    ]
    groups = []
    for driver in sorted(drivers, key=lambda e: e.path):
        members = tuple(
            sorted((o for o in entries if _is_prefix(o.path, driver.path)), key=lambda e: e.path)
        )
        groups.append(LineageGroup(members, driver.path))
    return groups
