"""Prompt templates: per-operation defaults, instantiation, and rendering."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

from .model import (
    Chain,
    GroupScope,
    LineageGroup,
    Mapping_,
    OperationKind,
    Step,
)

EXAMPLE_SEPARATOR = "###"
DEFAULT_MAX_TOKENS = 256


class ParseType(Enum):
    SINGLE_TEXT = "single_text"
    NUMBERED_LIST = "numbered_list"
    LABELED_FIELDS = "labeled_fields"


@dataclass(frozen=True)
class OperationDefaults:
    temperature: float
    keywords: tuple[str, ...]
    parse_type: ParseType


# Temperatures follow the creative-vs-deterministic split: ideation and
# free generation sample at 0.7, classification and extraction run greedy,
# rewriting and composition sit in between.
_DEFAULTS: dict[OperationKind, OperationDefaults] = {
    OperationKind.CLASSIFICATION: OperationDefaults(0.0, ("classify",), ParseType.LABELED_FIELDS),
    OperationKind.FACTUAL_QUERY: OperationDefaults(0.0, ("answer",), ParseType.SINGLE_TEXT),
    OperationKind.GENERATION: OperationDefaults(0.7, ("write",), ParseType.SINGLE_TEXT),
    OperationKind.IDEATION: OperationDefaults(0.7, ("a list of",), ParseType.NUMBERED_LIST),
    OperationKind.INFORMATION_EXTRACTION: OperationDefaults(0.0, ("extract",), ParseType.SINGLE_TEXT),
    OperationKind.REWRITING: OperationDefaults(0.3, ("rewrite",), ParseType.SINGLE_TEXT),
    OperationKind.SPLIT_POINTS: OperationDefaults(0.0, ("split", "a list of"), ParseType.NUMBERED_LIST),
    OperationKind.COMPOSE_POINTS: OperationDefaults(0.3, ("covers all",), ParseType.SINGLE_TEXT),
}


def defaults_for(op: OperationKind) -> OperationDefaults:
    return _DEFAULTS[op]


def step_temperature(step: Step) -> float:
    return step.temperature if step.temperature is not None else defaults_for(step.op).temperature


def step_scope(step: Step) -> GroupScope:
    if step.group_scope is not None:
        return step.group_scope
    if step.op.mapping is Mapping_.MANY_TO_ONE:
        return GroupScope.GLOBAL
    return GroupScope.PER_LINEAGE


class MissingLayerName(Exception):
    pass


class EmptyGroup(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """A step's resolved prompt skeleton: description, prefixes, separator."""

    description: str
    prefixes: Mapping[str, str]  # layer id -> prefix (no trailing colon)
    input_order: tuple[str, ...]
    output: str
    example_separator: str = EXAMPLE_SEPARATOR


@dataclass(frozen=True)
class PromptRequest:
    prompt: str
    temperature: float
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop: tuple[str, ...] = ()


def _description_pattern(op: OperationKind, inputs: str, output: str) -> str:
    if op is OperationKind.CLASSIFICATION:
        return f"Classify the {inputs} by {output}."
    if op is OperationKind.FACTUAL_QUERY:
        return f"Given the {inputs}, answer with the {output}."
    if op is OperationKind.GENERATION:
        return f"Given the {inputs}, write {output}." if inputs else f"Write {output}."
    if op is OperationKind.IDEATION:
        if inputs:
            return f"Given {inputs}, the following is a list of {output}."
        return f"The following is a list of {output}."
    if op is OperationKind.INFORMATION_EXTRACTION:
        return f"Extract the {output} from the {inputs}."
    if op is OperationKind.REWRITING:
        return f"Rewrite the {inputs} into {output}."
    if op is OperationKind.SPLIT_POINTS:
        return f"Split the {inputs} into a list of {output}."
    if op is OperationKind.COMPOSE_POINTS:
        return f"Write one {output} that covers all of the {inputs}."
    raise ValueError(op)


def instantiate(chain: Chain, step: Step) -> PromptTemplate:
    """Fill the operation's template with the step's layer names.

    An explicit task description on the step overrides the generated pattern
    verbatim. Prefixes default to layer names; steps may override per layer.
    """
    names = {}
    for lid in (*step.inputs, step.output):
        name = chain.layer(lid).name
        if not name:
            raise MissingLayerName(lid)
        names[lid] = name

    if step.task_description:
        description = step.task_description
    else:
        inputs = " and ".join(names[lid] for lid in step.inputs)
        description = _description_pattern(step.op, inputs, names[step.output])

    prefixes = {lid: step.prefixes.get(lid, names[lid]) for lid in names}
    return PromptTemplate(
        description=description,
        prefixes=prefixes,
        input_order=step.inputs,
        output=step.output,
    )


def _example_lines(template: PromptTemplate, example: Mapping[str, str]) -> list[str]:
    lines = []
    for lid in template.input_order:
        if lid in example:
            lines.append(f"{template.prefixes[lid]}: {example[lid]}")
    if template.output in example:
        lines.append(f"{template.prefixes[template.output]}: {example[template.output]}")
    lines.append(template.example_separator)
    return lines


def _block_lines(template: PromptTemplate, step: Step, group: LineageGroup) -> list[str]:
    lines = []
    if step.op.mapping is Mapping_.MANY_TO_ONE:
        # Compose renders its inputs in lineage order (each point next to its
        # descendants), numbering repeated entries of the same layer.
        counts: dict[str, int] = {}
        for entry in group.entries:
            counts[entry.layer] = counts.get(entry.layer, 0) + 1
        seen: dict[str, int] = {}
        for entry in group.entries:
            prefix = template.prefixes[entry.layer]
            if counts[entry.layer] > 1:
                seen[entry.layer] = seen.get(entry.layer, 0) + 1
                lines.append(f"{prefix} {seen[entry.layer]}: {entry.text}")
            else:
                lines.append(f"{prefix}: {entry.text}")
        return lines
    for lid in template.input_order:
        for entry in group.entries_for(lid):
            lines.append(f"{template.prefixes[lid]}: {entry.text}")
    return lines


def stop_sequences(template: PromptTemplate) -> tuple[str, ...]:
    if template.input_order:
        first_prefix = template.prefixes[template.input_order[0]]
    else:
        first_prefix = template.prefixes[template.output]
    return (template.example_separator, "\n" + first_prefix + ":", "\n\n")


def render(
    template: PromptTemplate,
    step: Step,
    group: LineageGroup,
    instruction_block: Optional[str] = None,
) -> PromptRequest:
    """Assemble the final prompt for one running block.

    Layout: instruction block, then each few-shot example as prefix lines
    followed by a separator line, then the group's input values, ending with
    the bare output cue awaiting completion.
    """
    if step.inputs and not group.entries:
        raise EmptyGroup(step.id)

    instruction = (instruction_block if instruction_block is not None else template.description).rstrip()
    lines = [instruction]
    for example in step.few_shot:
        lines.extend(_example_lines(template, example))
    lines.extend(_block_lines(template, step, group))
    lines.append(f"{template.prefixes[template.output]}:")

    return PromptRequest(
        prompt="\n".join(lines),
        temperature=step_temperature(step),
        max_tokens=DEFAULT_MAX_TOKENS,
        stop=stop_sequences(template),
    )
