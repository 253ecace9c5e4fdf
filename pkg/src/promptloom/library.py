"""Chain spec file format (JSON), the built-in chains, and run transcripts."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .model import (
    BranchCondition,
    Cardinality,
    Chain,
    DataLayer,
    GroupScope,
    OperationKind,
    Step,
    ValidationReport,
    validate_chain,
)

FORMAT_VERSION = 1

Seeds = dict[str, list[str]]


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class SchemaError(Exception):
    def __init__(self, message: str, path: str):
        super().__init__(f"{message} at {path}")
        self.path = path


class ValidationError(Exception):
    def __init__(self, report: ValidationReport):
        super().__init__("; ".join(v.message for v in report))
        self.report = report


class UnknownBuiltin(Exception):
    pass


# ---------------------------------------------------------------------------
# Spec document <-> chain

_LAYER_FIELDS = {"id", "name", "cardinality", "colorTag", "producer", "isRoot"}
_STEP_FIELDS = {
    "id",
    "op",
    "inputs",
    "output",
    "taskDescription",
    "prefixes",
    "fewShot",
    "temperature",
    "branch",
    "groupScope",
}
_DOC_FIELDS = {"formatVersion", "id", "name", "layers", "steps", "seeds"}


def _require(obj: Mapping, key: str, path: str):
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", path)
    return obj[key]


def _reject_unknown(obj: Mapping, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"unknown field {key!r}", f"{path}.{key}")


def _layer_from_doc(obj: Mapping, path: str) -> DataLayer:
    _reject_unknown(obj, _LAYER_FIELDS, path)
    try:
        cardinality = Cardinality(obj.get("cardinality", "single"))
    except ValueError:
        raise SchemaError(f"bad cardinality {obj.get('cardinality')!r}", f"{path}.cardinality")
    return DataLayer(
        id=str(_require(obj, "id", path)),
        name=str(_require(obj, "name", path)),
        cardinality=cardinality,
        color_tag=int(obj.get("colorTag", 0)),
        producer=obj.get("producer"),
        is_root=bool(obj.get("isRoot", False)),
    )


def _step_from_doc(obj: Mapping, path: str) -> Step:
    _reject_unknown(obj, _STEP_FIELDS, path)
    try:
        op = OperationKind(_require(obj, "op", path))
    except ValueError:
        raise SchemaError(f"unknown operation {obj.get('op')!r}", f"{path}.op")
    branch = None
    if obj.get("branch") is not None:
        b = obj["branch"]
        _reject_unknown(b, {"guardLayer", "equalsLabel"}, f"{path}.branch")
        branch = BranchCondition(
            guard_layer=str(_require(b, "guardLayer", f"{path}.branch")),
            equals_label=str(_require(b, "equalsLabel", f"{path}.branch")),
        )
    scope = None
    if obj.get("groupScope") is not None:
        try:
            scope = GroupScope(obj["groupScope"])
        except ValueError:
            raise SchemaError(f"bad groupScope {obj['groupScope']!r}", f"{path}.groupScope")
    return Step(
        id=str(_require(obj, "id", path)),
        op=op,
        inputs=tuple(str(i) for i in _require(obj, "inputs", path)),
        output=str(_require(obj, "output", path)),
        task_description=str(obj.get("taskDescription", "")),
        prefixes=dict(obj.get("prefixes", {})),
        few_shot=tuple(dict(e) for e in obj.get("fewShot", [])),
        temperature=obj.get("temperature"),
        branch=branch,
        group_scope=scope,
    )


def load_spec(text: str) -> tuple[Chain, Seeds]:
    """Parse and validate a chain spec document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno)
    return load_spec_doc(doc)


def load_spec_doc(doc: Any) -> tuple[Chain, Seeds]:
    if not isinstance(doc, dict):
        raise SchemaError("document must be an object", "$")
    _reject_unknown(doc, _DOC_FIELDS, "$")
    version = _require(doc, "formatVersion", "$")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported formatVersion {version!r}", "$.formatVersion")

    layers = tuple(
        _layer_from_doc(obj, f"$.layers[{i}]") for i, obj in enumerate(_require(doc, "layers", "$"))
    )
    steps = tuple(
        _step_from_doc(obj, f"$.steps[{i}]") for i, obj in enumerate(_require(doc, "steps", "$"))
    )
    chain = Chain(
        id=str(_require(doc, "id", "$")),
        name=str(doc.get("name", doc["id"])),
        layers=layers,
        steps=steps,
    )
    report = validate_chain(chain)
    if report:
        raise ValidationError(report)

    seeds: Seeds = {}
    for layer_id, texts in doc.get("seeds", {}).items():
        if not chain.has_layer(layer_id):
            raise SchemaError(f"seed names missing layer {layer_id!r}", f"$.seeds.{layer_id}")
        seeds[layer_id] = [str(t) for t in texts]
    return chain, seeds


def save_spec(chain: Chain, seeds: Optional[Seeds] = None) -> dict:
    doc: dict[str, Any] = {
        "formatVersion": FORMAT_VERSION,
        "id": chain.id,
        "name": chain.name,
        "layers": [
            {
                "id": l.id,
                "name": l.name,
                "cardinality": l.cardinality.value,
                "colorTag": l.color_tag,
                "producer": l.producer,
                "isRoot": l.is_root,
            }
            for l in chain.layers
        ],
        "steps": [],
    }
    for s in chain.steps:
        step_doc: dict[str, Any] = {
            "id": s.id,
            "op": s.op.value,
            "inputs": list(s.inputs),
            "output": s.output,
            "taskDescription": s.task_description,
            "prefixes": dict(s.prefixes),
            "fewShot": [dict(e) for e in s.few_shot],
            "temperature": s.temperature,
            "branch": None,
            "groupScope": s.group_scope.value if s.group_scope else None,
        }
        if s.branch is not None:
            step_doc["branch"] = {
                "guardLayer": s.branch.guard_layer,
                "equalsLabel": s.branch.equals_label,
            }
        doc["steps"].append(step_doc)
    if seeds:
        doc["seeds"] = {k: list(v) for k, v in seeds.items()}
    return doc


def save_spec_text(chain: Chain, seeds: Optional[Seeds] = None) -> str:
    return json.dumps(save_spec(chain, seeds), ensure_ascii=False, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Built-in chains

ALEX_FEEDBACK = (
    "Alex could improve his presentation skills. He has too much text on his "
    "slides. His presentation meanders from topic to topic without a clear "
    "structure. He also does not engage with his audience when he presents."
)

FLASHCARD_FEW_SHOT = (
    {"english": "I do not speak French.", "french": "Je ne parle pas français."},
    {"english": "Where is a good restaurant?", "french": "Où est un bon restaurant?"},
)

METAPHOR_FEW_SHOT = (
    {
        "concept": "gratitude",
        "metaphor": "gratitude is like a stream in that it's a force that can carry you along.",
    },
    {
        "concept": "loss",
        "metaphor": (
            "loss is like a wing in that it's something you never wanted to lose, "
            "and it can take you away."
        ),
    },
)


def _peer_review() -> tuple[Chain, Seeds]:
    chain = Chain(
        id="peer_review",
        name="Peer review rewriting",
        layers=(
            DataLayer("feedback", "original feedback", Cardinality.SINGLE, 0, None, True),
            DataLayer("problem", "Alex's presentation problem", Cardinality.LIST, 1, "split"),
            DataLayer("suggestions", "suggestions", Cardinality.LIST, 2, "ideate"),
            DataLayer("paragraph", "friendly paragraph", Cardinality.SINGLE, 3, "compose"),
        ),
        steps=(
            Step(
                id="split",
                op=OperationKind.SPLIT_POINTS,
                inputs=("feedback",),
                output="problem",
                prefixes={"feedback": "Feedback", "problem": "Problem"},
            ),
            Step(
                id="ideate",
                op=OperationKind.IDEATION,
                inputs=("problem",),
                output="suggestions",
                prefixes={"problem": "Problem", "suggestions": "Suggestion"},
                few_shot=(
                    {"problem": "mumbles when presenting", "suggestions": "enunciate each syllable"},
                ),
            ),
            Step(
                id="compose",
                op=OperationKind.COMPOSE_POINTS,
                inputs=("problem", "suggestions"),
                output="paragraph",
                task_description=(
                    "Write one friendly paragraph that covers all the presentation "
                    "problems and suggestions."
                ),
                prefixes={
                    "problem": "Problem",
                    "suggestions": "Suggestion",
                    "paragraph": "Friendly paragraph",
                },
            ),
        ),
    )
    return chain, {"feedback": [ALEX_FEEDBACK]}


def _flashcards() -> tuple[Chain, Seeds]:
    chain = Chain(
        id="flashcards",
        name="Personalized flashcard creation",
        layers=(
            DataLayer("city", "visiting city", Cardinality.SINGLE, 0, None, True),
            DataLayer("interaction", "types of interactions", Cardinality.LIST, 1, "ideate_interactions"),
            DataLayer("english", "English sentences", Cardinality.LIST, 2, "ideate_english"),
            DataLayer("french", "French translations", Cardinality.SINGLE, 3, "translate"),
        ),
        steps=(
            Step(
                id="ideate_interactions",
                op=OperationKind.IDEATION,
                inputs=("city",),
                output="interaction",
                prefixes={"city": "City", "interaction": "Interaction type"},
            ),
            Step(
                id="ideate_english",
                op=OperationKind.IDEATION,
                inputs=("interaction",),
                output="english",
                prefixes={"interaction": "Interaction type", "english": "English"},
            ),
            Step(
                id="translate",
                op=OperationKind.REWRITING,
                inputs=("english",),
                output="french",
                task_description="Translate each English example into French.",
                prefixes={"english": "English", "french": "French"},
                few_shot=FLASHCARD_FEW_SHOT,
            ),
        ),
    )
    return chain, {"city": ["Paris"]}


def _metaphor() -> tuple[Chain, Seeds]:
    chain = Chain(
        id="metaphor",
        name="Metaphor creation",
        layers=(
            DataLayer("concept", "concept", Cardinality.SINGLE, 0, None, True),
            DataLayer("trait", "unique traits", Cardinality.LIST, 1, "ideate_traits"),
            DataLayer("metaphor", "metaphor", Cardinality.SINGLE, 2, "generate"),
        ),
        steps=(
            Step(
                id="ideate_traits",
                op=OperationKind.IDEATION,
                inputs=("concept",),
                output="trait",
                prefixes={"concept": "Concept", "trait": "Trait"},
            ),
            Step(
                id="generate",
                op=OperationKind.GENERATION,
                inputs=("concept", "trait"),
                output="metaphor",
                prefixes={"concept": "Concept", "trait": "Trait", "metaphor": "Metaphor"},
                few_shot=METAPHOR_FEW_SHOT,
            ),
        ),
    )
    return chain, {"concept": ["crowdsourcing"]}


VEGALITE_SAMPLE_SPEC = (
    '{"mark": "circle", "encoding": {"x": {"field": "Horsepower", "type": "quantitative"}, '
    '"y": {"field": "Miles_per_Gallon", "type": "quantitative"}, '
    '"size": {"field": "Origin", "type": "nominal"}}}'
)


def _vegalite_lint() -> tuple[Chain, Seeds]:
    chain = Chain(
        id="vegalite_lint",
        name="VegaLite design-constraint linting",
        layers=(
            DataLayer("spec_json", "VegaLite spec", Cardinality.SINGLE, 0, None, True),
            DataLayer("description", "natural language description", Cardinality.SINGLE, 1, "describe"),
            DataLayer("rules", "related visualization rules", Cardinality.SINGLE, 2, "extract_rules"),
            DataLayer("verdict", "validated issue and suggested fix", Cardinality.SINGLE, 3, "validate"),
            DataLayer("fixed", "final spec", Cardinality.SINGLE, 4, "rewrite_spec"),
        ),
        steps=(
            Step(
                id="describe",
                op=OperationKind.REWRITING,
                inputs=("spec_json",),
                output="description",
                prefixes={"spec_json": "Spec", "description": "Description"},
                # Design-constraint knowledge belongs in few-shot example pairs
                # (erroneous/fixed specs); fill these before serious use.
                few_shot=(),
            ),
            Step(
                id="extract_rules",
                op=OperationKind.INFORMATION_EXTRACTION,
                inputs=("description",),
                output="rules",
                prefixes={"description": "Description", "rules": "Rules"},
            ),
            Step(
                id="validate",
                op=OperationKind.CLASSIFICATION,
                inputs=("description", "rules"),
                output="verdict",
                prefixes={"description": "Description", "rules": "Rules", "verdict": "Verdict"},
            ),
            Step(
                id="rewrite_spec",
                op=OperationKind.REWRITING,
                inputs=("spec_json", "verdict"),
                output="fixed",
                prefixes={"spec_json": "Spec", "verdict": "Verdict", "fixed": "Fixed spec"},
            ),
        ),
    )
    return chain, {"spec_json": [VEGALITE_SAMPLE_SPEC]}


def _text_entry() -> tuple[Chain, Seeds]:
    chain = Chain(
        id="text_entry",
        name="Assisted text entry",
        layers=(
            DataLayer("user_input", "user input", Cardinality.SINGLE, 0, None, True),
            DataLayer("kind", "input kind", Cardinality.SINGLE, 1, "classify_input"),
            DataLayer("expansion", "expanded phrase", Cardinality.SINGLE, 2, "expand"),
            DataLayer("completion", "auto-completion", Cardinality.SINGLE, 3, "complete_phrase"),
        ),
        steps=(
            Step(
                id="classify_input",
                op=OperationKind.CLASSIFICATION,
                inputs=("user_input",),
                output="kind",
                task_description=(
                    "Classify whether the user input is a shorthand or a phrase."
                ),
                prefixes={"user_input": "Input", "kind": "Kind"},
            ),
            Step(
                id="expand",
                op=OperationKind.REWRITING,
                inputs=("user_input",),
                output="expansion",
                task_description="Rewrite the shorthand into the full phrase it stands for.",
                prefixes={"user_input": "Input", "expansion": "Expansion"},
                branch=BranchCondition("kind", "shorthand"),
            ),
            Step(
                id="complete_phrase",
                op=OperationKind.GENERATION,
                inputs=("user_input",),
                output="completion",
                task_description="Continue the phrase with a likely completion.",
                prefixes={"user_input": "Input", "completion": "Completion"},
                branch=BranchCondition("kind", "phrase"),
            ),
        ),
    )
    return chain, {"user_input": ["LTSG"]}


_BUILTINS = {
    "peer_review": _peer_review,
    "flashcards": _flashcards,
    "metaphor": _metaphor,
    "vegalite_lint": _vegalite_lint,
    "text_entry": _text_entry,
}

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin(name: str) -> tuple[Chain, Seeds]:
    """Return one of the five built-in chains with its seed entries."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownBuiltin(name)
    return factory()


# ---------------------------------------------------------------------------
# Transcripts (JSON lines, one record per line)


class IoError(Exception):
    pass


def append_transcript(path: str, record: Mapping[str, Any]) -> None:
    """Append one record; the single write keeps records line-atomic."""
    try:
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise IoError(str(exc))


def read_transcript(path: str) -> tuple[list[dict], list[str]]:
    """Read records in order; a corrupt trailing partial record is skipped."""
    records: list[dict] = []
    warnings: list[str] = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(str(exc))
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            warnings.append(f"skipped corrupt record on line {lineno}")
    return records, warnings


def record_to_json(record) -> dict:
    """Serialize an executor RunRecord for transcripts and the API."""
    doc = {
        "timestamp": record.timestamp,
        "stepId": record.step_id,
        "blockIndex": record.block_index,
        "status": record.status.value,
        "request": {
            "prompt": record.request.prompt,
            "temperature": record.request.temperature,
            "maxTokens": record.request.max_tokens,
            "stop": list(record.request.stop),
        },
        "completion": None,
        "values": list(record.values),
        "replacedEntryIds": list(record.replaced_entry_ids),
        "newEntryIds": list(record.new_entry_ids),
        "error": record.error,
    }
    if record.completion is not None:
        doc["completion"] = {
            "text": record.completion.text,
            "finishReason": record.completion.finish_reason.value,
        }
    return doc


@dataclass
class TranscriptWriter:
    """Stamps per-file sequence numbers and the chain id onto run records."""

    path: str
    chain_id: str
    _next_seq: int = 1

    def append(self, record: Mapping[str, Any]) -> None:
        stamped = {"seq": self._next_seq, "chainId": self.chain_id, **record}
        append_transcript(self.path, stamped)
        self._next_seq += 1
