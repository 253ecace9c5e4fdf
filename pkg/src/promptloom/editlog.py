"""Reconstructs and classifies what users did between model runs.

Before/after text snapshots of each run are aligned with a longest-common-
subsequence match to recover the model's contribution and the user's edits,
then each inter-run interval gets exactly one category.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from difflib import SequenceMatcher
from enum import Enum
from typing import Optional, Sequence

# Formatting-related stopwords: tokens whose addition or removal does not
# change content. Published here as the concrete list the classifier uses.
FORMAT_STOPWORDS = frozenset(
    {
        "a",
        "an",
        "and",
        "the",
        "of",
        "to",
        "in",
        "on",
        "at",
        "or",
        "for",
        "is",
        "are",
        "was",
        "be",
        "that",
        "this",
        "it",
        "with",
        "as",
        "so",
        "also",
    }
)

_ENUMERATOR_TOKEN = re.compile(r"^(?:\d+[.)]|[-*•])$")

# LCS-ratio gain required before a deletion counts as reverting the model.
UNDO_SIMILARITY_MARGIN = 0.0


class EventKind(Enum):
    RUN = "run"
    TEMPERATURE_CHANGE = "temperature_change"
    SNAPSHOT = "snapshot"


@dataclass(frozen=True)
class EditEvent:
    timestamp: float
    kind: EventKind
    text_before: str = ""
    text_after: str = ""
    temperature: Optional[float] = None


class EditCategory(Enum):
    RUN = "RUN"
    UNDO = "UNDO"
    FORMAT = "FORMAT"
    CREATE_CONTENT = "CREATE-CONTENT"
    CURATE_CONTENT = "CURATE-CONTENT"
    CHANGE_TEMPERATURE = "CHANGE-TEMPERATURE"


@dataclass
class SessionStats:
    total_runs: int
    consecutive_run_ratio: float
    edit_shares: dict[str, float]
    no_edits: bool


class NonMonotonicTimestamps(Exception):
    pass


Span = tuple[int, int]


def _content_tokens(text: str) -> list[str]:
    tokens = []
    for token in text.split():
        stripped = token.strip(".,;:!?\"'()")
        if not stripped or _ENUMERATOR_TOKEN.match(token):
            continue
        if stripped.lower() in FORMAT_STOPWORDS:
            continue
        tokens.append(stripped)
    return tokens


def _format_equivalent(a: str, b: str) -> bool:
    return _content_tokens(a) == _content_tokens(b)


def _lcs_ratio(a: str, b: str) -> float:
    return SequenceMatcher(None, a, b, autojunk=False).ratio()


def model_spans(text_before: str, text_after: str) -> list[Span]:
    """Character spans of ``text_after`` that the model inserted."""
    spans = []
    matcher = SequenceMatcher(None, text_before, text_after, autojunk=False)
    for tag, _, _, j1, j2 in matcher.get_opcodes():
        if tag in ("insert", "replace") and j2 > j1:
            spans.append((j1, j2))
    return spans


def _overlaps(span: Span, spans: Sequence[Span]) -> bool:
    lo, hi = span
    return any(lo < s_hi and s_lo < hi for s_lo, s_hi in spans)


def diff_interval(
    prev_run_after: str,
    next_run_before: str,
    model_span_of_prev_run: Sequence[Span],
    pre_previous_text: str = "",
) -> EditCategory:
    """Classify the edits made between two model runs."""
    if _format_equivalent(prev_run_after, next_run_before):
        return EditCategory.FORMAT

    matcher = SequenceMatcher(None, prev_run_after, next_run_before, autojunk=False)
    opcodes = matcher.get_opcodes()
    deleted_spans = [(i1, i2) for tag, i1, i2, _, _ in opcodes if tag in ("delete", "replace")]
    inserted_text = "".join(
        next_run_before[j1:j2] for tag, _, _, j1, j2 in opcodes if tag in ("insert", "replace")
    )
    insert_only = all(tag in ("equal", "insert") for tag, *_ in opcodes)

    if deleted_spans and any(_overlaps(s, model_span_of_prev_run) for s in deleted_spans):
        gain = _lcs_ratio(next_run_before, pre_previous_text) - _lcs_ratio(
            prev_run_after, pre_previous_text
        )
        if gain > UNDO_SIMILARITY_MARGIN:
            return EditCategory.UNDO

    if insert_only:
        if _content_tokens(inserted_text):
            return EditCategory.CREATE_CONTENT
        return EditCategory.FORMAT

    return EditCategory.CURATE_CONTENT


def classify_session(events: Sequence[EditEvent]) -> list[EditCategory]:
    """One category per inter-run interval; temperature changes pass through."""
    last_ts = None
    for event in events:
        if last_ts is not None and event.timestamp < last_ts:
            raise NonMonotonicTimestamps(f"timestamp {event.timestamp} after {last_ts}")
        last_ts = event.timestamp

    categories: list[EditCategory] = []
    prev_run: Optional[EditEvent] = None
    pending: list[EditCategory] = []
    for event in events:
        if event.kind is EventKind.TEMPERATURE_CHANGE:
            pending.append(EditCategory.CHANGE_TEMPERATURE)
            continue
        if event.kind is not EventKind.RUN:
            continue
        if prev_run is not None:
            categories.extend(pending)
            if event.text_before == prev_run.text_after:
                categories.append(EditCategory.RUN)
            else:
                categories.append(
                    diff_interval(
                        prev_run.text_after,
                        event.text_before,
                        model_spans(prev_run.text_before, prev_run.text_after),
                        prev_run.text_before,
                    )
                )
        pending = []
        prev_run = event
    categories.extend(pending)
    return categories


_EDIT_CATEGORIES = (EditCategory.UNDO, EditCategory.CREATE_CONTENT, EditCategory.CURATE_CONTENT)


def stats(categories: Sequence[EditCategory]) -> SessionStats:
    """Session ratios: consecutive runs count RUN and FORMAT intervals."""
    intervals = [c for c in categories if c is not EditCategory.CHANGE_TEMPERATURE]
    total_runs = len(intervals) + 1 if intervals else 0

    if intervals:
        consecutive = sum(1 for c in intervals if c in (EditCategory.RUN, EditCategory.FORMAT))
        ratio = consecutive / len(intervals)
    else:
        ratio = 0.0

    edit_counts = {c: sum(1 for x in intervals if x is c) for c in _EDIT_CATEGORIES}
    total_edits = sum(edit_counts.values())
    shares = {
        c.value: (edit_counts[c] / total_edits if total_edits else 0.0)
        for c in _EDIT_CATEGORIES
    }
    return SessionStats(
        total_runs=total_runs,
        consecutive_run_ratio=ratio,
        edit_shares=shares,
        no_edits=total_edits == 0,
    )


def stats_to_json(s: SessionStats) -> dict:
    return {
        "totalRuns": s.total_runs,
        "consecutiveRunRatio": s.consecutive_run_ratio,
        "editShares": s.edit_shares,
        "noEdits": s.no_edits,
    }


def event_from_json(obj: dict) -> EditEvent:
    return EditEvent(
        timestamp=float(obj["timestamp"]),
        kind=EventKind(obj["kind"]),
        text_before=str(obj.get("textBefore", "")),
        text_after=str(obj.get("textAfter", "")),
        temperature=obj.get("temperature"),
    )
