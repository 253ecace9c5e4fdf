"""promptloom: a model-agnostic engine for LLM prompt chains."""

from .model import (
    BranchCondition,
    Cardinality,
    Chain,
    CycleDetected,
    DataEntry,
    DataLayer,
    EditKind,
    EditRejected,
    GroupScope,
    LineageGroup,
    OperationKind,
    Origin,
    Step,
    StructuralEdit,
    apply_edit,
    group_lineages,
    invert_edit,
    topological_order,
    validate_chain,
)
from .prompting import ParseType, PromptRequest, PromptTemplate, defaults_for, instantiate, render
from .parsing import FinishReason, ParsedOutput, RawCompletion, parse_numbered_list, parse_output
from .backends import BackendConfig, BackendKind, MatcherKind, MockBackend, MockRule, from_config
from .executor import (
    BlockStatus,
    ChainState,
    RunMode,
    RunRecord,
    RunningBlockPlan,
    edit_entry,
    initial_state,
    plan_step,
    run_block,
    run_chain,
    run_step,
)
from .library import builtin, load_spec, save_spec, save_spec_text

__version__ = "0.1.0"
