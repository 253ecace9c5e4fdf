"""Parse raw model completions into typed values."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .prompting import ParseType


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class RawCompletion:
    text: str
    finish_reason: FinishReason = FinishReason.STOP


@dataclass
class ParsedOutput:
    values: list[str]
    parse_type: ParseType
    warnings: list[str] = field(default_factory=list)


class EmptyOutput(Exception):
    pass


def strip_stops(raw: str, stops: Sequence[str]) -> str:
    """Cut the completion at the earliest occurrence of any stop sequence."""
    cut = len(raw)
    for stop in stops:
        if not stop:
            continue
        idx = raw.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    return raw[:cut]


# Accepted enumerators: "1.", "1)", and "-". Model output drifts between them.
_ENUMERATOR = re.compile(r"^\s*(?:\d+[.)]|-)\s+")


def parse_numbered_list(raw: str) -> ParsedOutput:
    """Split a numbered-list completion into trimmed items, order preserved."""
    values: list[str] = []
    warnings: list[str] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        item = _ENUMERATOR.sub("", line, count=1).strip()
        if item:
            values.append(item)
        else:
            warnings.append(f"dropped empty item on line {lineno}")
    return ParsedOutput(values=values, parse_type=ParseType.NUMBERED_LIST, warnings=warnings)


def render_numbered_list(items: Iterable[str]) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


def guard_value(text: str) -> str:
    """Normalization used for branch-condition label comparison only."""
    return text.strip().lower()


def parse_output(
    raw: RawCompletion, parse_type: ParseType, stops: Sequence[str] = ()
) -> ParsedOutput:
    """Strip stop sequences, then parse per the step's output type."""
    text = strip_stops(raw.text, stops)

    if parse_type is ParseType.NUMBERED_LIST:
        parsed = parse_numbered_list(text)
    elif parse_type is ParseType.LABELED_FIELDS:
        first = ""
        for line in text.splitlines():
            if line.strip():
                first = line.strip()
                break
        parsed = ParsedOutput(values=[first] if first else [], parse_type=parse_type)
        if not parsed.values:
            raise EmptyOutput("labeled-fields completion is empty")
    else:
        value = text.strip()
        if not value:
            raise EmptyOutput("single-text completion trimmed to empty")
        parsed = ParsedOutput(values=[value], parse_type=parse_type)

    if raw.finish_reason is FinishReason.LENGTH:
        parsed.warnings.append("completion truncated at max_tokens")
    return parsed
