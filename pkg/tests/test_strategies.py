"""Strategy tests: the four scoring paths over scripted backends."""

from __future__ import annotations

import json

import pytest

from ielts_aes.bands import Criterion, CriterionSet, overall_from_criteria
from ielts_aes.gateway import ScriptedBackend, fingerprint
from ielts_aes.prompting import ContextBlock
from ielts_aes.retrieval import HashingEmbedder, build_index
from ielts_aes.strategies import (
    StrategyConfig,
    StrategyConfigError,
    build_context,
    score_criterion_joint,
    score_criterion_rag,
    score_essay,
    score_final_band,
    score_sft_dpo,
)

from conftest import band, make_essay, synthetic_essays
from scripting import (
    build_fixture_entries,
    default_response,
    joint_response,
    single_response,
    strategy_requests,
)


def scripted_for_strategy(essay, cfg, responses=None, **kwargs) -> ScriptedBackend:
    backend = ScriptedBackend()
    train_by_id = kwargs.get("train_by_id", {})
    requests = strategy_requests(
        essay,
        cfg,
        kwargs.get("index"),
        kwargs.get("embedder"),
        train_by_id,
        kwargs.get("fixed_ids", []),
        {cfg.backend: ""},
    )
    for role, request in requests:
        text = (responses or {}).get(role, default_response(role, essay))
        backend.add({"fingerprint": fingerprint(request), "completion": text})
    return backend


class TestStrategyConfig:
    def test_unknown_kind_rejected(self):
        with pytest.raises(StrategyConfigError):
            StrategyConfig(name="x", kind="nope")

    def test_criterion_rag_needs_exemplar_source(self):
        with pytest.raises(StrategyConfigError):
            StrategyConfig(name="x", kind="criterion-rag", k_shots=2, exemplar_source="none")

    def test_nonstandard_k_warns_but_allowed(self, caplog):
        with caplog.at_level("WARNING"):
            cfg = StrategyConfig(
                name="x", kind="final-band-prompting", k_shots=3, exemplar_source="fixed-list"
            )
        assert not cfg.standard_shot_count
        assert "k_shots" in caplog.text

    def test_rag_kinds_default_to_two_shot_retrieval(self):
        rag = StrategyConfig(name="a", kind="criterion-rag", backend="b")
        assert rag.k_shots == 2 and rag.exemplar_source == "retrieval"
        dpo = StrategyConfig(name="b", kind="sft-dpo-rag", backend="b")
        assert dpo.k_shots == 2 and dpo.exemplar_source == "retrieval"
        plain = StrategyConfig(name="c", kind="final-band-prompting", backend="b")
        assert plain.k_shots == 0 and plain.exemplar_source == "none"


class TestScoreFinalBand:
    def test_fixture_pass_through(self):
        essay = make_essay(overall=6.5)
        cfg = StrategyConfig(name="fb", kind="final-band-prompting", backend="b")
        backend = scripted_for_strategy(essay, cfg, responses={"final-band": "6.5"})
        result = score_final_band(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(6.5)
        assert result.criteria is None
        assert not result.parse_failed
        assert len(result.calls) == 1

    def test_prose_without_number_flags_parse_failure(self):
        essay = make_essay()
        cfg = StrategyConfig(name="fb", kind="final-band-prompting", backend="b")
        backend = scripted_for_strategy(
            essay, cfg, responses={"final-band": "I will not provide any verdict."}
        )
        result = score_final_band(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.parse_failed
        assert result.failure == "parse:no-band-found"
        assert result.overall is None

    def test_two_shot_retrieval_exemplars_traced(self):
        train = synthetic_essays(8)
        embedder = HashingEmbedder(dim=64)
        index = build_index(train, embedder)
        essay = make_essay("query-1", overall=6.0)
        cfg = StrategyConfig(
            name="fb2", kind="final-band-prompting", k_shots=2,
            exemplar_source="retrieval", backend="b",
        )
        backend = scripted_for_strategy(
            essay, cfg, index=index, embedder=embedder,
            train_by_id={e.id: e for e in train},
        )
        result = score_essay(
            essay, cfg, {"b": backend}, index, embedder, {e.id: e for e in train}
        )
        assert len(result.exemplar_ids) == 2
        assert all(eid in {e.id for e in train} for eid in result.exemplar_ids)
        assert essay.id not in result.exemplar_ids


class TestScoreCriterionJoint:
    def test_aggregation(self):
        essay = make_essay(overall=6.5)
        cfg = StrategyConfig(name="cj", kind="criterion-joint", backend="b")
        response = json.dumps(
            {"TR_Band": 6.5, "CC_Band": 6.5, "LR_Band": 6.0, "GRA_Band": 6.5}
        )
        backend = scripted_for_strategy(essay, cfg, responses={"criterion-joint": response})
        result = score_criterion_joint(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(6.5)
        assert result.pre_snap_mean == 6.375

    def test_uniform_scores(self):
        essay = make_essay()
        cfg = StrategyConfig(name="cj", kind="criterion-joint", backend="b")
        backend = scripted_for_strategy(
            essay, cfg, responses={"criterion-joint": joint_response(band(6.0))}
        )
        result = score_criterion_joint(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(6.0)

    def test_missing_key_flags(self):
        essay = make_essay()
        cfg = StrategyConfig(name="cj", kind="criterion-joint", backend="b")
        backend = scripted_for_strategy(
            essay, cfg, responses={"criterion-joint": '{"TR_Band": 6.0}'}
        )
        result = score_criterion_joint(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.parse_failed
        assert result.failure == "parse:missing-key"


class TestScoreCriterionRag:
    def make_backend(self, essay, cfg, overrides=None):
        responses = {}
        for criterion in Criterion:
            responses[criterion.value] = single_response(criterion, band(6.5))
        responses["LR"] = single_response(Criterion.LR, band(6.0))
        responses.update(overrides or {})
        return scripted_for_strategy(essay, cfg, responses=responses)

    def test_case_study_aggregation(self):
        # criterion outputs (6.5, 6.5, 6.0, 6.5) must aggregate to 6.5
        essay = make_essay("case-1", overall=6.5)
        cfg = StrategyConfig(name="rag", kind="criterion-rag", k_shots=0, backend="b")
        backend = self.make_backend(essay, cfg)
        result = score_criterion_rag(essay, cfg, {"b": backend}, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(6.5)
        assert result.criteria == CriterionSet(band(6.5), band(6.5), band(6.0), band(6.5))
        assert len(result.calls) == 4
        for criterion in (Criterion.CC, Criterion.LR, Criterion.GRA):
            assert f"{criterion.value}:" in result.feedback

    def test_uniform_five(self):
        essay = make_essay()
        cfg = StrategyConfig(name="rag", kind="criterion-rag", k_shots=0, backend="b")
        overrides = {c.value: single_response(c, band(5.0)) for c in Criterion}
        backend = self.make_backend(essay, cfg, overrides)
        result = score_criterion_rag(essay, cfg, {"b": backend}, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(5.0)

    def test_missing_tr_fixture_flags_but_traces_rest(self):
        essay = make_essay()
        cfg = StrategyConfig(name="rag", kind="criterion-rag", k_shots=0, backend="b")
        backend = ScriptedBackend()
        requests = strategy_requests(essay, cfg, None, None, {}, [], {"b": ""})
        for role, request in requests:
            if role == "TR":
                continue  # force a FixtureMiss on the TR call
            backend.register(request, single_response(Criterion[role], band(6.0)))
        result = score_criterion_rag(essay, cfg, {"b": backend}, ContextBlock(query_essay_id=essay.id))
        assert result.parse_failed
        assert result.failure == "backend:fixture-miss"
        assert len(result.calls) == 4
        assert sum(1 for call in result.calls if call.completion_text is not None) == 3
        assert result.overall is None  # no partial aggregation

    def test_aggregation_consistency_invariant(self):
        essay = make_essay("case-2", overall=6.5)
        cfg = StrategyConfig(name="rag", kind="criterion-rag", k_shots=0, backend="b")
        backend = self.make_backend(essay, cfg)
        result = score_criterion_rag(essay, cfg, {"b": backend}, ContextBlock(query_essay_id=essay.id))
        recomputed = overall_from_criteria(result.criteria, cfg.rounding)
        assert recomputed.band == result.overall

    def test_per_criterion_backend_routing(self):
        essay = make_essay()
        cfg = StrategyConfig(
            name="rag4",
            kind="criterion-rag",
            k_shots=0,
            backend="shared",
            criterion_backends={"TR": "tr-adapter"},
        )
        train_by_id = {}
        requests = dict(strategy_requests(essay, cfg, None, None, train_by_id, [], {"shared": "", "tr-adapter": ""}))
        shared = ScriptedBackend(backend_id="shared")
        tr_adapter = ScriptedBackend(backend_id="tr-adapter")
        for role, request in requests.items():
            target = tr_adapter if role == "TR" else shared
            target.register(request, single_response(Criterion[role], band(6.0)))
        result = score_criterion_rag(
            essay, cfg, {"shared": shared, "tr-adapter": tr_adapter},
            ContextBlock(query_essay_id=essay.id),
        )
        assert not result.parse_failed
        assert len(tr_adapter.call_log) == 1
        assert len(shared.call_log) == 3


class TestScoreSftDpo:
    def test_joint_parse_and_feedback(self):
        essay = make_essay()
        cfg = StrategyConfig(name="dpo", kind="sft-dpo-rag", k_shots=0, backend="b")
        response = joint_response(band(6.0), feedback="Uneven development of ideas.")
        backend = scripted_for_strategy(essay, cfg, responses={"criterion-joint": response})
        result = score_sft_dpo(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.overall == band(6.0)
        assert result.feedback == "Uneven development of ideas."

    def test_backend_error_surfaced_in_result(self):
        essay = make_essay()
        cfg = StrategyConfig(name="dpo", kind="sft-dpo-rag", k_shots=0, backend="b")
        backend = ScriptedBackend()  # empty -> FixtureMiss
        result = score_sft_dpo(essay, cfg, backend, ContextBlock(query_essay_id=essay.id))
        assert result.parse_failed
        assert result.failure.startswith("backend:")


class TestBuildContext:
    def test_fixed_list_skips_self_and_backfills(self):
        train = synthetic_essays(5)
        cfg = StrategyConfig(
            name="fb",
            kind="final-band-prompting",
            k_shots=2,
            exemplar_source="fixed-list",
            backend="b",
            fixed_exemplar_ids=[train[0].id, train[1].id, train[2].id],
        )
        ctx = build_context(
            train[0], cfg, None, None, {e.id: e for e in train}, cfg.fixed_exemplar_ids
        )
        assert [ex.essay_id for ex in ctx.exemplars] == [train[1].id, train[2].id]

    def test_deterministic_fixture_scripting_round_trip(self):
        # build_fixture_entries must cover exactly the requests a run makes
        train = synthetic_essays(6)
        test = synthetic_essays(3, id_prefix="test")
        embedder = HashingEmbedder(dim=32)
        index = build_index(train, embedder)
        cfg = StrategyConfig(
            name="rag", kind="criterion-rag", k_shots=2,
            exemplar_source="retrieval", backend="b",
        )
        entries = build_fixture_entries(
            test, [cfg], train, index, embedder, {"b": ""}
        )
        backend = ScriptedBackend(entries, backend_id="b")
        for essay in test:
            result = score_essay(
                essay, cfg, {"b": backend}, index, embedder, {e.id: e for e in train}
            )
            assert not result.parse_failed
