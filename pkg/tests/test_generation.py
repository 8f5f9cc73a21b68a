"""Candidate generation: extraction, self-refine retry, ensemble ordering."""

from __future__ import annotations

import pytest

from conftest import make_registry

from polysql.errors import ConfigInvalid, ExtractionFailure
from polysql.execution import ExecStatus
from polysql.generation import GeneratorBinding, extract_sql, generate_all, generate_one
from polysql.schema import SchemaSubset


BINDING = GeneratorBinding("gen_a", "gen_a_role", "generate_default", 1)


@pytest.fixture()
def full_subset(store_doc) -> SchemaSubset:
    return SchemaSubset.closed(store_doc, store_doc.column_set(), 1)


def subsets_for(store_doc, n: int) -> list[SchemaSubset]:
    return [SchemaSubset.closed(store_doc, store_doc.column_set(), i) for i in range(1, n + 1)]


# --- SQL extraction ----------------------------------------------------------


def test_extract_last_fenced_block():
    response = "First try:\n```sql\nSELECT 1\n```\nBetter:\n```sql\nSELECT 2\n```"
    assert extract_sql(response) == "SELECT 2"


def test_extract_from_first_select_keyword():
    assert extract_sql("Sure! SELECT name FROM users") == "SELECT name FROM users"


def test_extract_with_statement():
    text = "WITH t AS (SELECT 1) SELECT * FROM t"
    assert extract_sql(f"here you go: {text}")== text


def test_extract_whole_response_fallback():
    assert extract_sql("name FROM users") == "name FROM users"


def test_extract_trims_to_first_statement():
    assert extract_sql("SELECT 1; SELECT 2;") == "SELECT 1"
    assert extract_sql("SELECT 'a;b'; SELECT 2") == "SELECT 'a;b'"


def test_extract_failure_on_blank():
    with pytest.raises(ExtractionFailure):
        extract_sql("   ")


# --- single-candidate generation ---------------------------------------------


def test_ok_candidate_not_refined(store_db, full_subset, prompts):
    registry = make_registry({"gen_a_role": [(None, "```sql\nSELECT name FROM users\n```")]})
    candidate = generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    assert candidate.outcome.status is ExecStatus.OK
    assert candidate.refined is False
    assert candidate.sql == "SELECT name FROM users"
    assert registry.chat_backends["gen_a_role"].cursor == 1


def test_broken_then_fixed_triggers_exactly_one_retry(store_db, full_subset, prompts):
    registry = make_registry(
        {
            "gen_a_role": [
                (None, "```sql\nSELEC name FROM users\n```"),
                (None, "```sql\nSELECT name FROM users\n```"),
            ]
        }
    )
    candidate = generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    assert candidate.refined is True
    assert candidate.outcome.status is ExecStatus.OK
    assert registry.chat_backends["gen_a_role"].cursor == 2


def test_broken_twice_stops_after_retry(store_db, full_subset, prompts):
    registry = make_registry(
        {
            "gen_a_role": [
                (None, "```sql\nSELEC 1\n```"),
                (None, "```sql\nSELEC 2\n```"),
                (None, "```sql\nSELECT 3\n```"),
            ]
        }
    )
    candidate = generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    assert candidate.refined is True
    assert candidate.outcome.status is ExecStatus.SYNTAX_ERROR
    assert registry.chat_backends["gen_a_role"].cursor == 2  # no third call


def test_refine_prompt_carries_previous_sql_and_feedback(store_db, full_subset, prompts):
    registry = make_registry(
        {
            "gen_a_role": [
                (None, "```sql\nSELEC name FROM users\n```"),
                (None, "```sql\nSELECT name FROM users\n```"),
            ]
        }
    )
    generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    refine_prompt = registry.chat_backends["gen_a_role"].calls[1]
    assert "SELEC name FROM users" in refine_prompt
    assert "syntax" in refine_prompt


def test_exhausted_backend_yields_flagged_candidate(store_db, full_subset, prompts):
    registry = make_registry({"gen_a_role": []})
    candidate = generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    assert candidate.sql == ""
    assert candidate.outcome.status is ExecStatus.RUNTIME_ERROR
    assert "no candidate produced" in candidate.outcome.message


def test_anomalous_first_result_triggers_refine(store_db, full_subset, prompts):
    registry = make_registry(
        {
            "gen_a_role": [
                (None, "```sql\nSELECT NULL\n```"),
                (None, "```sql\nSELECT name FROM users\n```"),
            ]
        }
    )
    candidate = generate_one(BINDING, "q", "e", full_subset, store_db, registry, prompts)
    assert candidate.refined is True
    assert candidate.outcome.status is ExecStatus.OK
    assert registry.chat_backends["gen_a_role"].cursor == 2


# --- ensemble ----------------------------------------------------------------


def _bindings(n: int) -> list[GeneratorBinding]:
    return [
        GeneratorBinding(f"gen_{i}", f"role_{i}", "generate_default", rank=i)
        for i in range(1, n + 1)
    ]


def _ok_scripts(bindings, n_subsets):
    return {
        b.backend_role: [(None, f"```sql\nSELECT {i} FROM users\n```")] * n_subsets
        for i, b in enumerate(bindings, start=1)
    }


def test_two_schemas_five_generators_yield_ten(store_db, store_doc, prompts):
    bindings = _bindings(5)
    subsets = subsets_for(store_doc, 2)
    registry = make_registry(_ok_scripts(bindings, 2))
    candidates = generate_all(bindings, "q", "e", subsets, store_db, registry, prompts)
    assert len(candidates) == 10


def test_single_binding_single_schema(store_db, store_doc, prompts):
    bindings = _bindings(1)
    registry = make_registry(_ok_scripts(bindings, 1))
    candidates = generate_all(bindings, "q", "e", subsets_for(store_doc, 1), store_db, registry, prompts)
    assert len(candidates) == 1


def test_output_order_is_schema_major_rank_minor(store_db, store_doc, prompts):
    bindings = list(reversed(_bindings(3)))  # shuffled input order
    registry = make_registry(_ok_scripts(bindings, 2))
    candidates = generate_all(bindings, "q", "e", subsets_for(store_doc, 2), store_db, registry, prompts)
    order = [(c.schema_index, c.generator_id) for c in candidates]
    assert order == [
        (1, "gen_1"), (1, "gen_2"), (1, "gen_3"),
        (2, "gen_1"), (2, "gen_2"), (2, "gen_3"),
    ]


def test_failing_generator_does_not_affect_others(store_db, store_doc, prompts):
    bindings = _bindings(3)
    scripts = _ok_scripts(bindings, 2)
    scripts["role_2"] = []  # generator 2's backend is dead
    registry = make_registry(scripts)
    candidates = generate_all(bindings, "q", "e", subsets_for(store_doc, 2), store_db, registry, prompts)
    assert len(candidates) == 6
    by_generator = {}
    for c in candidates:
        by_generator.setdefault(c.generator_id, []).append(c)
    assert all(c.outcome.status is ExecStatus.RUNTIME_ERROR for c in by_generator["gen_2"])
    assert all(c.outcome.is_ok for c in by_generator["gen_1"] + by_generator["gen_3"])


def test_ranks_must_be_permutation(store_db, store_doc, prompts):
    bad = [
        GeneratorBinding("a", "role_1", "generate_default", 1),
        GeneratorBinding("b", "role_2", "generate_default", 3),
    ]
    registry = make_registry({})
    with pytest.raises(ConfigInvalid):
        generate_all(bad, "q", "e", subsets_for(store_doc, 1), store_db, registry, prompts)


def test_generate_all_pure_under_deterministic_mocks(store_db, store_doc, prompts):
    bindings = _bindings(2)

    def run():
        registry = make_registry(
            {
                "role_1": [(None, "```sql\nSELEC 1\n```"), (None, "```sql\nSELECT name FROM users\n```")] * 2,
                "role_2": [(None, "```sql\nSELECT city FROM users\n```")] * 2,
            }
        )
        return [
            (c.sql, c.generator_id, c.schema_index, c.refined, c.outcome.status)
            for c in generate_all(
                bindings, "q", "e", subsets_for(store_doc, 2), store_db, registry, prompts
            )
        ]

    assert run() == run()


def test_worker_lanes_match_serial_order(store_db, store_doc, prompts):
    bindings = _bindings(4)

    def run(workers: int):
        registry = make_registry(_ok_scripts(bindings, 2))
        return [
            (c.sql, c.generator_id, c.schema_index)
            for c in generate_all(
                bindings, "q", "e", subsets_for(store_doc, 2), store_db, registry, prompts,
                workers=workers,
            )
        ]

    assert run(1) == run(4)


def test_call_count_is_two_iff_first_outcome_not_ok(store_db, store_doc, prompts):
    bindings = _bindings(2)
    registry = make_registry(
        {
            "role_1": [(None, "```sql\nSELECT 1\n```")],          # ok first try
            "role_2": [(None, "```sql\nSELEC 1\n```"), (None, "```sql\nSELECT 2\n```")],
        }
    )
    candidates = generate_all(bindings, "q", "e", subsets_for(store_doc, 1), store_db, registry, prompts)
    assert registry.chat_backends["role_1"].cursor == 1
    assert registry.chat_backends["role_2"].cursor == 2
    assert [c.refined for c in candidates] == [False, True]
