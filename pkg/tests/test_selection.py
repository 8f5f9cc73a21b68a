"""Candidate selection: deformalization, clustering, reorganization, choice."""

from __future__ import annotations

import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_candidate, make_registry

from polysql.errors import EmptyClusterSet
from polysql.execution import ExecStatus
from polysql.schema import SchemaSubset
from polysql.selection import (
    cluster_candidates,
    deformalize,
    majority_branch,
    order_clusters,
    parse_selector_choice,
    reorganize,
    select_final,
    shortness_key,
)


# --- deformalization ---------------------------------------------------------


def test_deformalize_basic_rules():
    assert deformalize("select  a\nfrom t;") == "SELECT a FROM t"


def test_deformalize_preserves_quoted_literals():
    assert deformalize("SELECT 'a  b'") == "SELECT 'a  b'"
    assert deformalize('select "My  Col" from t') == 'SELECT "My  Col" FROM t'


def test_deformalize_strips_comments():
    sql = "SELECT a -- trailing comment\nFROM t /* block\ncomment */ WHERE x = 1"
    assert deformalize(sql) == "SELECT a FROM t WHERE x = 1"


def test_deformalize_does_not_uppercase_identifiers():
    assert deformalize("select Name from users") == "SELECT Name FROM users"


def test_deformalize_non_sql_passthrough():
    assert deformalize("just   some\ttext") == "just some text"


def _corpus(n: int = 1000) -> list[str]:
    rng = random.Random(11)
    columns = ["a", "b", "Name", "total_price", '"Quoted Col"']
    tables = ["t", "users", "order_items"]
    fragments = []
    for i in range(n):
        cols = ", ".join(rng.sample(columns, rng.randint(1, 3)))
        table = rng.choice(tables)
        sql = f"select {cols}   from {table}"
        if rng.random() < 0.5:
            sql += f" where {rng.choice(columns)} = '{rng.choice(['x  y', 'A;B', 'it''s'])}'"
        if rng.random() < 0.3:
            sql += " -- comment " + str(i)
        if rng.random() < 0.3:
            sql += f" group by {rng.choice(columns)}"
        if rng.random() < 0.5:
            sql += " ;"
        fragments.append(sql)
    return fragments


def test_deformalize_idempotent_over_corpus():
    for sql in _corpus(1000):
        once = deformalize(sql)
        assert deformalize(once) == once


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=string.ascii_letters + string.digits + " \t\n'\"`[];,()=-*/<>.", max_size=60))
def test_deformalize_idempotent_on_arbitrary_text(text):
    once = deformalize(text)
    assert deformalize(once) == once


# --- clustering ---------------------------------------------------------------


def test_cluster_sizes_six_three_one():
    candidates = (
        [make_candidate(f"SELECT {i}", rows=[["X"]]) for i in range(6)]
        + [make_candidate(f"SELECT {i}", rows=[["Y"]]) for i in range(6, 9)]
        + [make_candidate("SELECT 9", rows=[["Z"]])]
    )
    clusters = cluster_candidates(candidates)
    assert [c.size for c in clusters.clusters] == [6, 3, 1]
    assert clusters.total_candidates == 10


def test_all_error_candidates_cluster_to_nothing():
    candidates = [make_candidate("SELECT 1", status=ExecStatus.SYNTAX_ERROR) for _ in range(4)]
    clusters = cluster_candidates(candidates)
    assert clusters.clusters == ()
    assert clusters.total_candidates == 0


def test_identical_results_form_single_cluster():
    candidates = [make_candidate(f"SELECT {i}", rows=[[1], [2]]) for i in range(10)]
    clusters = cluster_candidates(candidates)
    assert len(clusters.clusters) == 1
    assert clusters.clusters[0].size == 10


def test_anomalous_candidates_are_excluded():
    candidates = [
        make_candidate("SELECT 1", rows=[[1]]),
        make_candidate("SELECT NULL", status=ExecStatus.ANOMALOUS),
    ]
    clusters = cluster_candidates(candidates)
    assert clusters.total_candidates == 1


def test_cluster_members_pairwise_equivalent():
    from polysql.execution import equivalent

    candidates = [
        make_candidate("SELECT 1", rows=[[1], [2]]),
        make_candidate("SELECT 2", rows=[[2], [1]]),  # same set
        make_candidate("SELECT 3", rows=[[1]]),
    ]
    clusters = cluster_candidates(candidates, "set")
    for cluster in clusters.clusters:
        for a in cluster.members:
            for b in cluster.members:
                assert equivalent(a.outcome, b.outcome, "set")


# --- reorganization ------------------------------------------------------------


RANKS = {"gen_1": 1, "gen_2": 2, "gen_3": 3}


def _sized_candidates(sizes: list[int], generators: list[str] | None = None):
    candidates = []
    label = 0
    for size in sizes:
        for i in range(size):
            generator = generators[len(candidates)] if generators else f"gen_{(i % 3) + 1}"
            candidates.append(
                make_candidate(f"SELECT {label}_{i}", generator_id=generator, rows=[[f"r{label}"]])
            )
        label += 1
    return candidates


def test_majority_branch_emits_all_members_largest_first():
    # Hand-traced: sizes 6,3,1 over 10 candidates; 6 >= ceil(10/2) = 5, so the
    # majority branch emits all 10, cluster of six first.
    candidates = _sized_candidates([6, 3, 1])
    clusters = cluster_candidates(candidates)
    assert majority_branch(clusters)
    emitted = reorganize(clusters, RANKS)
    assert len(emitted) == 10
    first_cluster_rows = {c.outcome.rows for c in emitted[:6]}
    assert first_cluster_rows == {(("r0",),)}


def test_minority_branch_emits_one_representative_per_cluster():
    # Hand-traced: sizes 4,4,2 over 10; 4 < ceil(10/2) = 5 -> three
    # representatives, each the shortest deformalized member of its cluster.
    candidates = _sized_candidates([4, 4, 2])
    clusters = cluster_candidates(candidates)
    assert not majority_branch(clusters)
    emitted = reorganize(clusters, RANKS)
    assert len(emitted) == 3
    ordered = order_clusters(clusters, RANKS)
    for representative, cluster in zip(emitted, ordered):
        assert shortness_key(representative) == min(shortness_key(m) for m in cluster.members)


def test_majority_emission_is_permutation_of_ok_candidates():
    candidates = _sized_candidates([5, 2, 1])
    clusters = cluster_candidates(candidates)
    emitted = reorganize(clusters, RANKS)
    assert sorted(c.sql for c in emitted) == sorted(c.sql for c in candidates)


def test_cluster_sizes_non_increasing_in_emitted_order():
    candidates = _sized_candidates([2, 5, 3])
    ordered = order_clusters(cluster_candidates(candidates), RANKS)
    sizes = [c.size for c in ordered]
    assert sizes == sorted(sizes, reverse=True)


def test_intra_cluster_order_follows_generator_rank():
    candidates = [
        make_candidate("SELECT 1", generator_id="gen_3", rows=[["X"]]),
        make_candidate("SELECT 2", generator_id="gen_1", rows=[["X"]]),
        make_candidate("SELECT 3", generator_id="gen_2", rows=[["X"]]),
        make_candidate("SELECT 4", generator_id="gen_1", rows=[["Y"]]),
    ]
    clusters = cluster_candidates(candidates)
    emitted = reorganize(clusters, RANKS)
    assert [c.generator_id for c in emitted[:3]] == ["gen_1", "gen_2", "gen_3"]


def test_equal_size_tiebreak_prefers_better_generator_rank():
    candidates = [
        make_candidate("SELECT 1", generator_id="gen_2", rows=[["A"]]),
        make_candidate("SELECT 2", generator_id="gen_1", rows=[["B"]]),
    ]
    ordered = order_clusters(cluster_candidates(candidates), RANKS)
    assert ordered[0].members[0].generator_id == "gen_1"


def test_reorganize_empty_raises():
    clusters = cluster_candidates([make_candidate("SELECT 1", status=ExecStatus.TIMEOUT)])
    with pytest.raises(EmptyClusterSet):
        reorganize(clusters, RANKS)


# --- final choice ---------------------------------------------------------------


def _subsets(store_doc) -> list[SchemaSubset]:
    return [SchemaSubset.closed(store_doc, store_doc.column_set(), 1)]


def test_single_cluster_returns_shortest(store_doc, prompts):
    candidates = [
        make_candidate("SELECT a FROM t JOIN t", rows=[["X"]]),
        make_candidate("SELECT a FROM t", rows=[["X"]]),
    ]
    result = select_final(
        candidates, _subsets(store_doc), "q", "e", RANKS, "majority",
    )
    assert result.candidate.sql == "SELECT a FROM t"
    assert result.report.branch == "unanimous"


def test_answer_one_selector_picks_head_of_largest_cluster(store_doc, prompts):
    candidates = _sized_candidates([3, 1])
    registry = make_registry({"selector": [(None, "1")]})
    result = select_final(
        candidates, _subsets(store_doc), "q", "e", RANKS, "model",
        registry=registry, prompts=prompts,
    )
    largest_rows = (("r0",),)
    assert result.candidate.outcome.rows == largest_rows
    assert result.report.chosen_index == result.report.emitted_indexes[0]


def test_zero_ok_candidates_degenerate_fallback(store_doc, prompts):
    candidates = [
        make_candidate("SELECT something long FROM t", status=ExecStatus.RUNTIME_ERROR),
        make_candidate("SELECT 1", status=ExecStatus.SYNTAX_ERROR),
    ]
    result = select_final(candidates, _subsets(store_doc), "q", "e", RANKS, "majority")
    assert result.report.degenerate
    assert result.candidate.sql == "SELECT 1"


def test_unparseable_selector_response_falls_back_to_first(store_doc, prompts):
    candidates = _sized_candidates([3, 1])
    registry = make_registry({"selector": [(None, "I cannot decide at all")]})
    result = select_final(
        candidates, _subsets(store_doc), "q", "e", RANKS, "model",
        registry=registry, prompts=prompts,
    )
    assert result.report.selector_fallback
    assert result.report.chosen_index == result.report.emitted_indexes[0]


def test_selector_backend_failure_falls_back_to_majority(store_doc, prompts):
    candidates = _sized_candidates([3, 1])
    registry = make_registry({"selector": []})  # exhausted immediately
    result = select_final(
        candidates, _subsets(store_doc), "q", "e", RANKS, "model",
        registry=registry, prompts=prompts,
    )
    majority = select_final(candidates, _subsets(store_doc), "q", "e", RANKS, "majority")
    assert result.report.backend_failed
    assert result.candidate.sql == majority.candidate.sql


def test_selector_free_text_sql_matched_by_deformalized_equality(store_doc, prompts):
    candidates = [
        make_candidate("SELECT a FROM t", rows=[["X"]]),
        make_candidate("SELECT b FROM t", rows=[["Y"]]),
        make_candidate("SELECT b  from t", rows=[["Y"]]),
    ]
    registry = make_registry({"selector": [(None, "the best is: select b from t")]})
    result = select_final(
        candidates, _subsets(store_doc), "q", "e", RANKS, "model",
        registry=registry, prompts=prompts,
    )
    assert deformalize(result.candidate.sql) == "SELECT b FROM t"


def test_select_final_requires_candidates(store_doc):
    with pytest.raises(ValueError):
        select_final([], _subsets(store_doc), "q", "e", RANKS, "majority")


def test_parse_selector_choice_index_bounds():
    candidates = [make_candidate("SELECT 1", rows=[["X"]])]
    assert parse_selector_choice("1", candidates) == 0
    assert parse_selector_choice("7", candidates) is None
    assert parse_selector_choice("no idea", candidates) is None


def test_answer_one_model_equals_majority_policy_on_random_instances(store_doc, prompts):
    rng = random.Random(5)
    for _ in range(50):
        n = rng.randint(2, 10)
        candidates = []
        for i in range(n):
            if rng.random() < 0.2:
                candidates.append(
                    make_candidate(f"SELECT {i}", generator_id=f"gen_{rng.randint(1, 3)}",
                                   status=ExecStatus.RUNTIME_ERROR)
                )
            else:
                label = rng.randint(0, 3)
                candidates.append(
                    make_candidate(
                        f"SELECT col_{i} FROM t", generator_id=f"gen_{rng.randint(1, 3)}",
                        rows=[[f"r{label}"]],
                    )
                )
        registry = make_registry({"selector": [(None, "1")]})
        model_result = select_final(
            candidates, _subsets(store_doc), "q", "e", RANKS, "model",
            registry=registry, prompts=prompts,
        )
        majority_result = select_final(
            candidates, _subsets(store_doc), "q", "e", RANKS, "majority",
        )
        assert model_result.candidate is majority_result.candidate
