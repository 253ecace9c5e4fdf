"""Plans running blocks, invokes the backend, and maintains entry provenance.

State mutation is confined to ``ChainState``; the chain itself stays immutable.
Blocks within a step may fetch completions concurrently, but results are
committed in group order, so the final state is independent of completion
timing.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .backends import Backend, BackendError
from .model import (
    Chain,
    DataEntry,
    LineageGroup,
    Origin,
    Step,
    group_lineages,
    topological_order,
)
from .parsing import EmptyOutput, RawCompletion, parse_output
from .prompting import PromptRequest, defaults_for, instantiate, render, step_scope


class BlockStatus(Enum):
    PENDING = "pending"
    SKIPPED_FROZEN = "skipped_frozen"
    SKIPPED_BRANCH = "skipped_branch"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class MissingUpstream(Exception):
    pass


class UnknownEntry(Exception):
    pass


class FreezeStale(Exception):
    pass


@dataclass
class RunningBlockPlan:
    """One planned model invocation: a step bound to a lineage group."""

    step_id: str
    index: int
    group: LineageGroup
    prompt_preview: PromptRequest
    status: BlockStatus = BlockStatus.PENDING


@dataclass
class RunRecord:
    seq: int
    timestamp: float
    step_id: str
    block_index: int
    status: BlockStatus
    request: PromptRequest
    completion: Optional[RawCompletion] = None
    values: tuple[str, ...] = ()
    replaced_entry_ids: tuple[str, ...] = ()
    new_entry_ids: tuple[str, ...] = ()
    error: Optional[str] = None


class ChainState:
    """Mutable run-time state for one chain: entries per layer plus history."""

    def __init__(self, chain: Chain):
        self.chain_id = chain.id
        self.entries: dict[str, list[DataEntry]] = {layer.id: [] for layer in chain.layers}
        self.history: list[RunRecord] = []
        self.touches: list[tuple[str, int]] = []  # (entry id, seq) for edits/replacements
        self._seq = 0
        self._entry_counter = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def new_entry_id(self) -> str:
        self._entry_counter += 1
        return f"e{self._entry_counter:04d}"

    def all_ids(self) -> set[str]:
        return {e.id for entries in self.entries.values() for e in entries}

    def find(self, entry_id: str) -> DataEntry:
        for entries in self.entries.values():
            for e in entries:
                if e.id == entry_id:
                    return e
        raise UnknownEntry(entry_id)

    def add_entry(
        self,
        layer_id: str,
        text: str,
        lineage: tuple[str, ...] = (),
        origin: Origin = Origin.MODEL,
    ) -> DataEntry:
        seq = self.next_seq()
        entry = DataEntry(
            id=self.new_entry_id(),
            layer=layer_id,
            text=text,
            lineage=lineage,
            origin=origin,
            created_seq=seq,
        )
        self.entries.setdefault(layer_id, []).append(entry)
        return entry

    def stale_ids(self) -> set[str]:
        return {e.id for entries in self.entries.values() for e in entries if e.stale}

    def _touch(self, entry_id: str) -> int:
        seq = self.next_seq()
        self.touches.append((entry_id, seq))
        return seq

    def _mark_descendants_stale(self, ancestor_ids: set[str]) -> None:
        if not ancestor_ids:
            return
        for entries in self.entries.values():
            for e in entries:
                if e.frozen:
                    continue  # frozen entries are never stale
                if any(a in e.lineage for a in ancestor_ids):
                    e.stale = True


def initial_state(chain: Chain, seeds: Mapping[str, Sequence[str]] | None = None) -> ChainState:
    """Fresh state with seed entries installed in the named root layers."""
    state = ChainState(chain)
    for layer_id, texts in (seeds or {}).items():
        for text in texts:
            state.add_entry(layer_id, text, origin=Origin.SEED)
    return state


# ---------------------------------------------------------------------------
# Planning


def _guard_entry(state: ChainState, guard_layer: str, group: LineageGroup) -> Optional[DataEntry]:
    rep = group.representative
    candidates = []
    for e in state.entries.get(guard_layer, []):
        path = e.path
        if path[: len(rep)] == rep or rep[: len(path)] == path:
            candidates.append(e)
    if not candidates:
        return None
    return max(candidates, key=lambda e: (len(e.path), e.path))


def _matching_outputs(state: ChainState, step: Step, group: LineageGroup) -> list[DataEntry]:
    return [e for e in state.entries.get(step.output, []) if e.lineage == group.representative]


def plan_step(chain: Chain, state: ChainState, step: Step) -> list[RunningBlockPlan]:
    """One plan per lineage group, with branch/freeze skips resolved."""
    known = state.all_ids()
    entries_by_layer: dict[str, list[DataEntry]] = {}
    for lid in step.inputs:
        # Orphans (survivors of a replaced lineage) are kept for the user but
        # no longer drive blocks.
        layer_entries = [
            e for e in state.entries.get(lid, []) if all(a in known for a in e.lineage)
        ]
        if not layer_entries:
            raise MissingUpstream(f"input layer {lid!r} of step {step.id!r} has no entries")
        entries_by_layer[lid] = layer_entries

    groups = group_lineages(entries_by_layer, step_scope(step), known_ids=known)
    if not step.inputs:
        groups = [LineageGroup((), ())]  # seed-less generation: one block

    template = instantiate(chain, step)
    plans = []
    for i, group in enumerate(groups):
        preview = render(template, step, group)
        status = BlockStatus.PENDING
        if step.branch is not None:
            guard = _guard_entry(state, step.branch.guard_layer, group)
            if guard is None:
                raise MissingUpstream(
                    f"guard layer {step.branch.guard_layer!r} has no entry for block {i} of {step.id!r}"
                )
            if not step.branch.matches(guard.text):
                status = BlockStatus.SKIPPED_BRANCH
        if status is BlockStatus.PENDING:
            existing = _matching_outputs(state, step, group)
            if existing and all(e.frozen for e in existing):
                status = BlockStatus.SKIPPED_FROZEN
        plans.append(RunningBlockPlan(step.id, i, group, preview, status))
    return plans


# ---------------------------------------------------------------------------
# Execution


def _remove_dead_descendants(state: ChainState, removed_ids: set[str]) -> None:
    if not removed_ids:
        return
    for entries in state.entries.values():
        doomed = [
            e
            for e in entries
            if not e.frozen
            and e.origin is Origin.MODEL
            and any(a in removed_ids for a in e.lineage)
        ]
        for e in doomed:
            entries.remove(e)
            state._touch(e.id)


def _commit(
    chain: Chain,
    state: ChainState,
    step: Step,
    plan: RunningBlockPlan,
    completion: RawCompletion | None,
    error: Exception | None,
) -> RunRecord:
    record = RunRecord(
        seq=len(state.history) + 1,
        timestamp=time.time(),
        step_id=step.id,
        block_index=plan.index,
        status=BlockStatus.FAILED,
        request=plan.prompt_preview,
    )
    if error is not None:
        record.error = f"{type(error).__name__}: {error}"
        plan.status = BlockStatus.FAILED
        state.history.append(record)
        return record

    assert completion is not None
    record.completion = completion
    try:
        parsed = parse_output(
            completion, defaults_for(step.op).parse_type, stops=plan.prompt_preview.stop
        )
    except EmptyOutput as exc:
        record.error = f"EmptyOutput: {exc}"
        plan.status = BlockStatus.FAILED
        state.history.append(record)
        return record

    lineage = plan.group.representative
    layer_entries = state.entries.setdefault(step.output, [])
    existing = [e for e in layer_entries if e.lineage == lineage]
    replaced = [e for e in existing if not e.frozen and e.origin is Origin.MODEL]

    position = layer_entries.index(replaced[0]) if replaced else len(layer_entries)
    for e in replaced:
        layer_entries.remove(e)
        state._touch(e.id)
    # Model-produced descendants of a replaced entry describe a lineage that no
    # longer exists; drop them so a rerun converges instead of accumulating.
    # User-edited or frozen descendants survive as stale orphans.
    _remove_dead_descendants(state, {e.id for e in replaced})

    new_entries = []
    for value in parsed.values:
        seq = state.next_seq()
        entry = DataEntry(
            id=state.new_entry_id(),
            layer=step.output,
            text=value,
            lineage=lineage,
            origin=Origin.MODEL,
            created_seq=seq,
        )
        new_entries.append(entry)
    layer_entries[position:position] = new_entries

    state._mark_descendants_stale({e.id for e in replaced})

    plan.status = BlockStatus.DONE
    record.status = BlockStatus.DONE
    record.values = tuple(parsed.values)
    record.replaced_entry_ids = tuple(e.id for e in replaced)
    record.new_entry_ids = tuple(e.id for e in new_entries)
    state.history.append(record)
    return record


def run_block(
    chain: Chain, state: ChainState, plan: RunningBlockPlan, backend: Backend
) -> RunRecord:
    """Execute one pending block: complete, parse, and commit entries."""
    if plan.status is not BlockStatus.PENDING:
        raise ValueError(f"block {plan.index} of {plan.step_id} is {plan.status.value}")
    step = chain.step(plan.step_id)
    plan.status = BlockStatus.RUNNING
    try:
        completion = backend.complete(plan.prompt_preview)
    except BackendError as exc:
        return _commit(chain, state, step, plan, None, exc)
    return _commit(chain, state, step, plan, completion, None)


def _run_plans(
    chain: Chain,
    state: ChainState,
    step: Step,
    plans: list[RunningBlockPlan],
    backend: Backend,
    parallel: bool,
) -> list[RunRecord]:
    pending = [p for p in plans if p.status is BlockStatus.PENDING]
    if not pending:
        return []
    if not parallel or len(pending) == 1:
        return [run_block(chain, state, p, backend) for p in pending]

    # Fetch completions concurrently, then commit in group order so the final
    # state does not depend on completion timing.
    def fetch(plan: RunningBlockPlan):
        try:
            return backend.complete(plan.prompt_preview), None
        except BackendError as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=min(8, len(pending))) as pool:
        results = list(pool.map(fetch, pending))
    records = []
    for plan, (completion, error) in zip(pending, results):
        plan.status = BlockStatus.RUNNING
        records.append(_commit(chain, state, step, plan, completion, error))
    return records


def run_step(
    chain: Chain,
    state: ChainState,
    step: Step,
    backend: Backend,
    parallel: bool = False,
) -> list[RunRecord]:
    """Run every pending block of the step; per-block failures do not abort."""
    plans = plan_step(chain, state, step)
    return _run_plans(chain, state, step, plans, backend, parallel)


class RunMode(Enum):
    FULL = "full"
    STALE_ONLY = "stale"


@dataclass
class RunReport:
    records: list[RunRecord] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (step id, message)


def _block_is_stale(state: ChainState, step: Step, plan: RunningBlockPlan) -> bool:
    if any(e.stale for e in plan.group.entries):
        return True
    matching = _matching_outputs(state, step, plan.group)
    if not matching or any(e.stale for e in matching):
        return True
    # Outputs predating an input were computed from different data, even when
    # lineage containment alone does not flag them (compose rollups).
    newest_input = max((e.created_seq for e in plan.group.entries), default=0)
    oldest_output = min(e.created_seq for e in matching)
    return newest_input > oldest_output


def run_chain(
    chain: Chain,
    state: ChainState,
    backend: Backend,
    mode: RunMode = RunMode.FULL,
    parallel: bool = False,
) -> RunReport:
    """Execute all steps in topological order; branches failing elsewhere continue."""
    report = RunReport()
    for step_id in topological_order(chain):
        step = chain.step(step_id)
        try:
            plans = plan_step(chain, state, step)
        except MissingUpstream as exc:
            report.errors.append((step_id, str(exc)))
            continue
        if mode is RunMode.STALE_ONLY:
            plans = [
                p
                for p in plans
                if p.status is not BlockStatus.PENDING or _block_is_stale(state, step, p)
            ]
        records = _run_plans(chain, state, step, plans, backend, parallel)
        report.records.extend(records)
        for record in records:
            if record.error:
                report.errors.append((step_id, record.error))
    return report


# ---------------------------------------------------------------------------
# Entry editing


def edit_entry(
    state: ChainState,
    entry_id: str,
    text: Optional[str] = None,
    freeze: Optional[bool] = None,
    delete: bool = False,
) -> DataEntry:
    """Apply a user action to one entry and propagate staleness downstream."""
    entry = state.find(entry_id)
    if delete:
        state.entries[entry.layer].remove(entry)
        state._touch(entry.id)
        state._mark_descendants_stale({entry.id})
        return entry
    if text is not None and text != entry.text:
        entry.text = text
        entry.origin = Origin.USER
        entry.stale = False
        entry.created_seq = state._touch(entry.id)  # refresh point for staleness audits
        state._mark_descendants_stale({entry.id})
    if freeze is not None:
        if freeze and entry.stale:
            raise FreezeStale(entry_id)
        entry.frozen = freeze
    return entry


def is_orphan(state: ChainState, entry: DataEntry) -> bool:
    known = state.all_ids()
    return any(a not in known for a in entry.lineage)
