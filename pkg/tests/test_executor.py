import random

import pytest

from promptloom.backends import MatcherKind, MockBackend, MockRule
from promptloom.executor import (
    BlockStatus,
    FreezeStale,
    MissingUpstream,
    RunMode,
    UnknownEntry,
    edit_entry,
    initial_state,
    is_orphan,
    plan_step,
    run_block,
    run_chain,
    run_step,
)
from promptloom.library import builtin
from promptloom.model import (
    Cardinality,
    Chain,
    DataLayer,
    OperationKind,
    Origin,
    Step,
)


def review_backend():
    """Deterministic replies for the peer review chain, keyed on prompt cues."""
    return MockBackend(
        [
            MockRule(
                MatcherKind.CONTAINS,
                "Friendly paragraph:",
                "Thanks for sharing your work! A couple of thoughts below.",
                priority=3,
            ),
            MockRule(
                MatcherKind.CONTAINS,
                "Suggestion:",
                "1. shorten the slides\n2. add an outline",
                priority=2,
            ),
            MockRule(
                MatcherKind.CONTAINS,
                "Problem:",
                "1. Too much text on slides\n2. No clear structure",
                priority=1,
            ),
        ]
    )


def seeded_review():
    chain, seeds = builtin("peer_review")
    return chain, initial_state(chain, seeds)


def texts(state, layer):
    return [e.text for e in state.entries[layer]]


class TestPlanStep:
    def test_split_has_single_block(self):
        chain, state = seeded_review()
        plans = plan_step(chain, state, chain.step("split"))
        assert len(plans) == 1
        assert plans[0].status is BlockStatus.PENDING

    def test_fanout_one_block_per_problem(self):
        chain, state = seeded_review()
        run_step(chain, state, chain.step("split"), review_backend())
        plans = plan_step(chain, state, chain.step("ideate"))
        assert len(plans) == 2

    def test_missing_upstream_for_empty_root(self):
        chain, _ = builtin("peer_review")
        state = initial_state(chain)  # no seeds
        with pytest.raises(MissingUpstream):
            plan_step(chain, state, chain.step("split"))

    def test_frozen_outputs_skip_block(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_step(chain, state, chain.step("split"), backend)
        run_step(chain, state, chain.step("ideate"), backend)
        for e in state.entries["suggestions"]:
            edit_entry(state, e.id, freeze=True)
        plans = plan_step(chain, state, chain.step("ideate"))
        assert all(p.status is BlockStatus.SKIPPED_FROZEN for p in plans)

    def test_partially_frozen_outputs_still_run(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_step(chain, state, chain.step("split"), backend)
        run_step(chain, state, chain.step("ideate"), backend)
        edit_entry(state, state.entries["suggestions"][0].id, freeze=True)
        plans = plan_step(chain, state, chain.step("ideate"))
        assert any(p.status is BlockStatus.PENDING for p in plans)

    def test_preview_equals_executed_request(self):
        chain, state = seeded_review()
        plans = plan_step(chain, state, chain.step("split"))
        record = run_block(chain, state, plans[0], review_backend())
        assert record.request == plans[0].prompt_preview


class TestRunAndReplace:
    def test_full_run_populates_every_layer(self):
        chain, state = seeded_review()
        report = run_chain(chain, state, review_backend())
        assert report.errors == []
        assert len(state.entries["problem"]) == 2
        assert len(state.entries["suggestions"]) == 4
        assert len(state.entries["paragraph"]) == 1
        assert all(
            e.origin is Origin.MODEL
            for layer in ("problem", "suggestions", "paragraph")
            for e in state.entries[layer]
        )

    def test_rerun_replaces_in_place(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_chain(chain, state, backend)
        before = {layer: texts(state, layer) for layer in state.entries}
        run_chain(chain, state, backend)
        after = {layer: texts(state, layer) for layer in state.entries}
        assert after == before
        # replacement, not accumulation
        assert len(state.entries["suggestions"]) == 4

    def test_rerun_reports_replaced_ids(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_step(chain, state, chain.step("split"), backend)
        old_ids = [e.id for e in state.entries["problem"]]
        records = run_step(chain, state, chain.step("split"), backend)
        assert sorted(records[0].replaced_entry_ids) == sorted(old_ids)
        assert all(e.id not in old_ids for e in state.entries["problem"])

    def test_replacement_prunes_model_descendants(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_chain(chain, state, backend)
        kept = edit_entry(
            state, state.entries["suggestions"][0].id, text="my own suggestion"
        )
        run_step(chain, state, chain.step("split"), backend)
        # Model-produced suggestions of the replaced problems disappear; the
        # user-edited one survives as a stale orphan.
        assert [e.id for e in state.entries["suggestions"]] == [kept.id]
        assert kept.stale
        assert is_orphan(state, kept)
        assert not any(e.stale for e in state.entries["feedback"])

    def test_stale_only_after_upstream_rerun_rebuilds_downstream(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_chain(chain, state, backend)
        run_step(chain, state, chain.step("split"), backend)
        report = run_chain(chain, state, backend, mode=RunMode.STALE_ONLY)
        assert {r.step_id for r in report.records} == {"ideate", "compose"}
        assert len(state.entries["suggestions"]) == 4
        assert len(state.entries["paragraph"]) == 1

    def test_user_edited_entry_survives_rerun(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_step(chain, state, chain.step("split"), backend)
        kept = edit_entry(state, state.entries["problem"][0].id, text="my own problem")
        run_step(chain, state, chain.step("split"), backend)
        assert kept.id in [e.id for e in state.entries["problem"]]
        assert "my own problem" in texts(state, "problem")

    def test_backend_failure_recorded_not_raised(self):
        chain, state = seeded_review()
        report = run_chain(chain, state, MockBackend())  # no rules: every call fails
        assert report.errors
        assert all(r.status is BlockStatus.FAILED for r in report.records)
        assert state.entries["problem"] == []


class TestEditEntry:
    def test_text_edit_sets_user_origin_and_stales_children(self):
        chain, state = seeded_review()
        run_chain(chain, state, review_backend())
        problem = state.entries["problem"][0]
        edit_entry(state, problem.id, text="new wording")
        assert problem.origin is Origin.USER
        assert not problem.stale
        children = [e for e in state.entries["suggestions"] if problem.id in e.lineage]
        assert children and all(e.stale for e in children)
        others = [e for e in state.entries["suggestions"] if problem.id not in e.lineage]
        assert others and not any(e.stale for e in others)

    def test_frozen_descendant_never_goes_stale(self):
        chain, state = seeded_review()
        run_chain(chain, state, review_backend())
        shielded = state.entries["suggestions"][0]
        edit_entry(state, shielded.id, freeze=True)
        parent_id = shielded.lineage[-1]
        edit_entry(state, parent_id, text="changed")
        assert not shielded.stale

    def test_freeze_stale_entry_rejected(self):
        chain, state = seeded_review()
        run_chain(chain, state, review_backend())
        edit_entry(state, state.entries["problem"][0].id, text="changed")
        stale = next(e for e in state.entries["suggestions"] if e.stale)
        with pytest.raises(FreezeStale):
            edit_entry(state, stale.id, freeze=True)

    def test_delete_orphans_descendants(self):
        chain, state = seeded_review()
        run_chain(chain, state, review_backend())
        victim = state.entries["problem"][0]
        orphans = [e for e in state.entries["suggestions"] if victim.id in e.lineage]
        edit_entry(state, victim.id, delete=True)
        assert victim.id not in state.all_ids()
        for e in orphans:
            assert e.stale
            assert is_orphan(state, e)

    def test_unknown_entry(self):
        chain, state = seeded_review()
        with pytest.raises(UnknownEntry):
            edit_entry(state, "nope", text="x")


class TestBranchRouting:
    def classify_backend(self, label):
        return MockBackend(
            [
                MockRule(MatcherKind.CONTAINS, "Classify", label, priority=2),
                MockRule(MatcherKind.CONTAINS, "", "model text", priority=1),
            ]
        )

    @pytest.mark.parametrize("label,active,skipped", [
        ("shorthand", "expand", "complete_phrase"),
        ("phrase", "complete_phrase", "expand"),
    ])
    def test_exactly_one_branch_runs(self, label, active, skipped):
        chain, seeds = builtin("text_entry")
        state = initial_state(chain, seeds)
        report = run_chain(chain, state, self.classify_backend(label))
        assert report.errors == []
        by_step = {r.step_id: r for r in report.records}
        assert by_step[active].status is BlockStatus.DONE
        assert skipped not in by_step
        skipped_layer = chain.step(skipped).output
        assert state.entries[skipped_layer] == []

    def test_guard_match_is_case_insensitive(self):
        chain, seeds = builtin("text_entry")
        state = initial_state(chain, seeds)
        report = run_chain(chain, state, self.classify_backend("  Shorthand "))
        assert any(r.step_id == "expand" for r in report.records)


class TestStaleOnlyMode:
    def test_clean_state_runs_nothing(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_chain(chain, state, backend)
        report = run_chain(chain, state, backend, mode=RunMode.STALE_ONLY)
        assert report.records == []

    def test_edit_reruns_only_affected_subtree(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_chain(chain, state, backend)
        edited = state.entries["problem"][0]
        untouched = [
            e.id for e in state.entries["suggestions"] if edited.id not in e.lineage
        ]
        edit_entry(state, edited.id, text="speaks too fast")
        report = run_chain(chain, state, backend, mode=RunMode.STALE_ONLY)
        ran = {(r.step_id, r.block_index) for r in report.records}
        # one ideation block for the edited problem, plus the compose rollup
        assert {sid for sid, _ in ran} == {"ideate", "compose"}
        assert sum(1 for sid, _ in ran if sid == "ideate") == 1
        assert all(eid in [e.id for e in state.entries["suggestions"]] for eid in untouched)
        assert not state.stale_ids()

    def test_empty_output_layer_counts_as_stale(self):
        chain, state = seeded_review()
        backend = review_backend()
        run_step(chain, state, chain.step("split"), backend)
        report = run_chain(chain, state, backend, mode=RunMode.STALE_ONLY)
        ran_steps = {r.step_id for r in report.records}
        assert ran_steps == {"ideate", "compose"}


class TestParallelEquivalence:
    def test_parallel_matches_sequential_on_review_chain(self):
        chain, seeds = builtin("peer_review")
        outcomes = []
        for parallel in (False, True):
            state = initial_state(chain, seeds)
            run_chain(chain, state, review_backend(), parallel=parallel)
            outcomes.append(
                {layer: [(e.text, e.lineage) for e in entries] for layer, entries in state.entries.items()}
            )
        assert outcomes[0] == outcomes[1]

    def test_parallel_matches_sequential_on_flashcards(self):
        chain, seeds = builtin("flashcards")
        backend_rules = [
            MockRule(MatcherKind.CONTAINS, "French:", "Bonjour.", priority=3),
            MockRule(MatcherKind.CONTAINS, "English", "1. Hello.\n2. Goodbye.", priority=2),
            MockRule(MatcherKind.CONTAINS, "", "1. at a cafe\n2. at the station", priority=1),
        ]
        outcomes = []
        for parallel in (False, True):
            state = initial_state(chain, seeds)
            run_chain(chain, state, MockBackend(list(backend_rules)), parallel=parallel)
            outcomes.append({layer: texts(state, layer) for layer in state.entries})
        assert outcomes[0] == outcomes[1]
        assert len(outcomes[0]["french"]) == 4


def random_fanout_chain(rng, n_steps):
    """Random chain of rewriting and splitting steps over a single root."""
    layers = [DataLayer("root", "root layer", Cardinality.SINGLE, 0, None, True)]
    steps = []
    for i in range(n_steps):
        sid = f"s{i:02d}"
        source = rng.choice(layers)
        op = rng.choice([OperationKind.REWRITING, OperationKind.SPLIT_POINTS])
        card = Cardinality.LIST if op is OperationKind.SPLIT_POINTS else Cardinality.SINGLE
        out = DataLayer(f"l{i:02d}", f"layer {i:02d}", card, 0, sid, False)
        layers.append(out)
        steps.append(Step(sid, op, (source.id,), out.id))
    return Chain("rand", "rand", tuple(layers), tuple(steps))


def oracle_stale_ids(state):
    """Brute-force staleness: an ancestor was touched after the entry existed."""
    stale = set()
    for entries in state.entries.values():
        for e in entries:
            if e.frozen:
                continue
            if any(
                seq > e.created_seq and tid in e.lineage for tid, seq in state.touches
            ):
                stale.add(e.id)
    return stale


class TestStalenessOracle:
    def test_random_chains_agree_with_brute_force(self):
        rng = random.Random(42)
        backend = MockBackend(
            [MockRule(MatcherKind.CONTAINS, "", "1. alpha\n2. beta")]
        )
        for _ in range(50):
            chain = random_fanout_chain(rng, rng.randint(1, 8))
            state = initial_state(chain, {"root": ["seed text"]})
            run_chain(chain, state, backend)
            for _ in range(rng.randint(1, 6)):
                all_entries = [e for es in state.entries.values() for e in es]
                if not all_entries:
                    break
                target = rng.choice(all_entries)
                action = rng.random()
                if action < 0.5:
                    edit_entry(state, target.id, text=target.text + "!")
                elif action < 0.7 and not target.stale:
                    edit_entry(state, target.id, freeze=True)
                elif action < 0.85:
                    edit_entry(state, target.id, delete=True)
                else:
                    run_chain(chain, state, backend, mode=RunMode.STALE_ONLY)
            assert state.stale_ids() == oracle_stale_ids(state)
