"""polysql: a multi-candidate text-to-SQL pipeline.

Filters a database schema down to question-relevant column subsets, runs an
ensemble of SQL generators (each with one execution-feedback retry) over
those subsets, and picks the final query by clustering candidates on
execution-result equivalence before consulting a selection model.
"""

from .backends import (
    BackendRegistry,
    ChatRequest,
    EmbeddingVector,
    HashedNgramEmbedder,
    MockChatBackend,
    MockScriptEntry,
)
from .config import PipelineConfig, load_config
from .errors import PolysqlError
from .evaluation import BenchItem, Verdict, load_dataset, score_ex
from .execution import ExecStatus, ExecutionOutcome, canonicalize, equivalent, execute
from .generation import CandidateSql, GeneratorBinding, generate_all, generate_one
from .linking import (
    KeywordSet,
    RetrievedValue,
    ScoredColumn,
    build_retrieved_schema,
    extract_keywords,
    retrieve_values,
    score_columns,
    select_columns,
)
from .pipeline import AskResult, LinkResult, Pipeline
from .schema import (
    ColumnMeta,
    ColumnRef,
    Dialect,
    ForeignKey,
    SchemaDoc,
    SchemaSubset,
    TableMeta,
    introspect,
    pf_key_closure,
    render_schema,
)
from .selection import (
    Cluster,
    ClusterSet,
    SelectionResult,
    cluster_candidates,
    deformalize,
    reorganize,
    select_final,
)
from .synthesis import TrainingSample, mutate_sql, reformat_sql, synth_multitask, synth_selection

__version__ = "0.1.0"

__all__ = [
    "AskResult",
    "BackendRegistry",
    "BenchItem",
    "CandidateSql",
    "ChatRequest",
    "Cluster",
    "ClusterSet",
    "ColumnMeta",
    "ColumnRef",
    "Dialect",
    "EmbeddingVector",
    "ExecStatus",
    "ExecutionOutcome",
    "ForeignKey",
    "GeneratorBinding",
    "HashedNgramEmbedder",
    "KeywordSet",
    "LinkResult",
    "MockChatBackend",
    "MockScriptEntry",
    "Pipeline",
    "PipelineConfig",
    "PolysqlError",
    "RetrievedValue",
    "SchemaDoc",
    "SchemaSubset",
    "ScoredColumn",
    "SelectionResult",
    "TableMeta",
    "TrainingSample",
    "Verdict",
    "build_retrieved_schema",
    "canonicalize",
    "cluster_candidates",
    "deformalize",
    "equivalent",
    "execute",
    "extract_keywords",
    "generate_all",
    "generate_one",
    "introspect",
    "load_config",
    "load_dataset",
    "mutate_sql",
    "pf_key_closure",
    "reformat_sql",
    "render_schema",
    "reorganize",
    "retrieve_values",
    "score_columns",
    "score_ex",
    "select_columns",
    "select_final",
    "synth_multitask",
    "synth_selection",
]
