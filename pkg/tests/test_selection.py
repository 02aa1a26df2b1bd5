import itertools
import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grape.corpus import Candidate, CandidatePool, PoolFilterConfig, ingest
from grape.errors import ExportError, SelectError
from grape.hashing import text_id
from grape.scoring import finalize_score
from grape.selection import (
    SelectionStrategy,
    _random_indices,
    export_sft,
    select,
    select_all,
    token_weights,
)

from helpers import write_jsonl


def make_pool(instruction, responses, roles=None, rewards=None, sources=None):
    roles = roles or ["sft"] * len(responses)
    rewards = rewards or [None] * len(responses)
    sources = sources or ["src"] * len(responses)
    cands = tuple(
        Candidate(
            response_id=text_id(r),
            response=r,
            source_id=s,
            role_tag=role,
            reward=reward,
        )
        for r, role, reward, s in zip(responses, roles, rewards, sources)
    )
    return CandidatePool(instruction_id=text_id(instruction), instruction=instruction, candidates=cands)


def score_for(pool, idx, logprobs, scorer="tester"):
    cand = pool.candidates[idx]
    return finalize_score(logprobs, pool.instruction_id, cand.response_id, scorer)


def scores_with_perplexities(pool, ppls, scorer="tester"):
    # single-token scores whose perplexity is exactly the requested value
    return [
        score_for(pool, i, [-math.log(p)], scorer=scorer) for i, p in enumerate(ppls)
    ]


class TestSelect:
    def test_singleton_pool(self):
        pool = make_pool("q", ["only"])
        scores = scores_with_perplexities(pool, [3.0])
        result = select(pool, scores, SelectionStrategy(kind="grape"))
        assert [c.response_id for c in result.chosen] == [pool.candidates[0].response_id]

    def test_grape_vs_reverse_on_known_perplexities(self):
        pool = make_pool("q", ["A", "B", "C"])
        scores = [
            score_for(pool, 0, [-1.0, -2.0, -3.0]),  # ppl ~7.389
            score_for(pool, 1, [math.log(0.25)] * 4),  # ppl 4.0
            score_for(pool, 2, [-2.5]),  # ppl ~12.18
        ]
        grape = select(pool, scores, SelectionStrategy(kind="grape"))
        reverse = select(pool, scores, SelectionStrategy(kind="reverse_grape"))
        assert grape.chosen[0].response_id == text_id("B")
        assert reverse.chosen[0].response_id == text_id("C")
        assert grape.chosen[0].rank_key == pytest.approx(4.0)

    def test_tie_broken_by_pool_order(self):
        pool = make_pool("q", ["A", "B"])
        scores = scores_with_perplexities(pool, [4.0, 4.0])
        result = select(pool, scores, SelectionStrategy(kind="grape"))
        assert result.chosen[0].response_id == text_id("A")
        assert result.tiebreak_applied

    def test_untied_selection_not_flagged(self):
        pool = make_pool("q", ["A", "B", "C"])
        scores = scores_with_perplexities(pool, [4.0, 9.0, 9.0])
        result = select(pool, scores, SelectionStrategy(kind="grape"))
        assert not result.tiebreak_applied  # tie exists but never touches the choice

    def test_boundary_tie_flagged(self):
        pool = make_pool("q", ["A", "B", "C"])
        scores = scores_with_perplexities(pool, [4.0, 4.0, 9.0])
        result = select(pool, scores, SelectionStrategy(kind="grape", k=1))
        assert result.tiebreak_applied

    def test_k_capped_at_pool_size(self):
        pool = make_pool("q", ["A", "B"])
        scores = scores_with_perplexities(pool, [2.0, 3.0])
        result = select(pool, scores, SelectionStrategy(kind="grape", k=5))
        assert len(result.chosen) == 2

    def test_grape_chosen_sorted_ascending(self):
        pool = make_pool("q", ["A", "B", "C", "D"])
        scores = scores_with_perplexities(pool, [9.0, 2.0, 7.0, 4.0])
        result = select(pool, scores, SelectionStrategy(kind="grape", k=3))
        keys = [c.rank_key for c in result.chosen]
        assert keys == sorted(keys)

    def test_missing_score_rejected(self):
        pool = make_pool("q", ["A", "B"])
        scores = scores_with_perplexities(pool, [4.0, 5.0])[:1]
        with pytest.raises(SelectError, match="missing scores"):
            select(pool, scores, SelectionStrategy(kind="grape"))

    def test_mixed_scorers_rejected(self):
        pool = make_pool("q", ["A", "B"])
        scores = [
            score_for(pool, 0, [-1.0], scorer="one"),
            score_for(pool, 1, [-1.0], scorer="two"),
        ]
        with pytest.raises(SelectError, match="mix scorer ids"):
            select(pool, scores, SelectionStrategy(kind="grape"))

    def test_reward_selection(self):
        pool = make_pool("q", ["A", "B", "C"], rewards=[0.1, 0.9, 0.5])
        result = select(pool, [], SelectionStrategy(kind="reward", k=2))
        assert [c.response_id for c in result.chosen] == [text_id("B"), text_id("C")]
        assert result.chosen[0].rank_key == 0.9

    def test_reward_missing_rejected(self):
        pool = make_pool("q", ["A", "B"], rewards=[0.5, None])
        with pytest.raises(SelectError, match="reward"):
            select(pool, [], SelectionStrategy(kind="reward"))

    def test_sft_only_takes_first_sft(self):
        pool = make_pool("q", ["A", "B", "C"], roles=["generated", "sft", "sft"])
        result = select(pool, [], SelectionStrategy(kind="sft_only"))
        assert result.chosen[0].response_id == text_id("B")

    def test_sft_only_without_sft_names_pool(self):
        pool = make_pool("q", ["A"], roles=["generated"])
        with pytest.raises(SelectError, match=pool.instruction_id):
            select(pool, [], SelectionStrategy(kind="sft_only"))

    def test_random_is_seed_deterministic(self):
        pool = make_pool("q", ["A", "B", "C", "D"])
        a = select(pool, [], SelectionStrategy(kind="random", seed=7, k=2))
        b = select(pool, [], SelectionStrategy(kind="random", seed=7, k=2))
        assert a == b
        c = select(pool, [], SelectionStrategy(kind="random", seed=8, k=2))
        assert {x.response_id for x in a.chosen} != {x.response_id for x in c.chosen} or a != c

    def test_random_k_draws_distinct(self):
        pool = make_pool("q", ["A", "B", "C", "D"])
        result = select(pool, [], SelectionStrategy(kind="random", seed=3, k=4))
        assert len({c.response_id for c in result.chosen}) == 4

    def test_strategy_validation(self):
        with pytest.raises(SelectError):
            SelectionStrategy(kind="nope")
        with pytest.raises(SelectError):
            SelectionStrategy(kind="grape", k=0)
        with pytest.raises(SelectError):
            SelectionStrategy(kind="random", seed=-1)


class TestRandomDraws:
    def test_frozen_known_draws(self):
        # regression anchors for the pinned byte encodings (seed big-endian,
        # iid UTF-8, counter suffix from 1)
        iid = text_id("hello")
        assert _random_indices(iid, 7, 5, 3) == [1, 2, 4]
        assert _random_indices(iid, 0, 4, 1) == [3]
        assert _random_indices(text_id("other"), 0, 4, 1) == [1]

    def test_uniformity_within_4_sigma(self):
        # 10,000 synthetic pools of size 4: each index frequency near uniform
        counts = [0, 0, 0, 0]
        n_pools = 10_000
        for i in range(n_pools):
            iid = text_id(f"instruction number {i}")
            counts[_random_indices(iid, 0, 4, 1)[0]] += 1
        expected = n_pools / 4
        sigma = math.sqrt(n_pools * 0.25 * 0.75)
        for count in counts:
            assert abs(count - expected) <= 4 * sigma


class TestTokenWeights:
    def test_certain_token(self):
        score = finalize_score([0.0], "i", "r", "s")
        assert token_weights(score) == [1.0]

    def test_exact_probabilities(self):
        score = finalize_score([math.log(0.5), math.log(0.25)], "i", "r", "s")
        assert token_weights(score) == pytest.approx([0.5, 0.25])

    @given(
        st.lists(
            st.floats(min_value=-30, max_value=0, allow_nan=False, width=64),
            min_size=1,
            max_size=32,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_elementwise_exp_oracle(self, logprobs):
        score = finalize_score(logprobs, "i", "r", "s")
        weights = token_weights(score)
        assert weights == [math.exp(lp) for lp in score.answer_token_logprobs]
        assert all(0 < w <= 1.0 for w in weights)

    def test_emitted_on_selection(self):
        pool = make_pool("q", ["A", "B"])
        scores = [score_for(pool, 0, [math.log(0.5)]), score_for(pool, 1, [-3.0])]
        result = select(pool, scores, SelectionStrategy(kind="grape"), emit_token_weights=True)
        assert result.token_weights == (0.5,)


def brute_force_k_lowest(ppls, k):
    """Exhaustive enumeration oracle: lexicographically-first optimal index set."""
    n = len(ppls)
    k = min(k, n)
    best = min(
        itertools.combinations(range(n), k),
        key=lambda subset: (tuple(sorted(ppls[i] for i in subset)), subset),
    )
    return set(best)


class TestBruteForceEquivalence:
    def test_grape_matches_enumeration(self):
        rng = random.Random(2024)
        for _ in range(300):
            n = rng.randint(1, 8)
            k = rng.randint(1, n)
            # grid values force frequent ties
            ppls = [rng.choice([1.0, 2.0, 2.0, 3.0, 5.0, 8.0]) for _ in range(n)]
            pool = make_pool("q", [f"resp {i}" for i in range(n)])
            scores = scores_with_perplexities(pool, ppls)
            chosen = select(pool, scores, SelectionStrategy(kind="grape", k=k))
            got = {c.response_id for c in chosen.chosen}
            expected = {pool.candidates[i].response_id for i in brute_force_k_lowest(ppls, k)}
            assert got == expected

    def test_reverse_matches_enumeration(self):
        rng = random.Random(2025)
        for _ in range(300):
            n = rng.randint(1, 8)
            k = rng.randint(1, n)
            ppls = [rng.choice([1.0, 2.0, 4.0, 4.0, 9.0]) for _ in range(n)]
            pool = make_pool("q", [f"resp {i}" for i in range(n)])
            scores = scores_with_perplexities(pool, ppls)
            chosen = select(pool, scores, SelectionStrategy(kind="reverse_grape", k=k))
            got = {c.response_id for c in chosen.chosen}
            expected = {
                pool.candidates[i].response_id
                for i in brute_force_k_lowest([-p for p in ppls], k)
            }
            assert got == expected


class TestDuality:
    def test_strict_inequality_when_choices_differ(self):
        rng = random.Random(77)
        differing = 0
        for _ in range(500):
            n = rng.randint(2, 6)
            ppls = [rng.choice([1.5, 2.5, 2.5, 6.0]) for _ in range(n)]
            pool = make_pool("q", [f"r{i}" for i in range(n)])
            scores = scores_with_perplexities(pool, ppls)
            g = select(pool, scores, SelectionStrategy(kind="grape"))
            r = select(pool, scores, SelectionStrategy(kind="reverse_grape"))
            if g.chosen[0].response_id != r.chosen[0].response_id:
                differing += 1
                assert g.chosen[0].rank_key < r.chosen[0].rank_key
            else:
                assert len(set(ppls)) <= 1
        assert differing > 0

    def test_normalized_logprob_ordering_selects_same_set(self):
        rng = random.Random(88)
        for _ in range(200):
            n = rng.randint(2, 7)
            k = rng.randint(1, n)
            pool = make_pool("q", [f"r{i}" for i in range(n)])
            scores = [
                score_for(pool, i, [rng.uniform(-5, 0) for _ in range(rng.randint(1, 9))])
                for i in range(n)
            ]
            result = select(pool, scores, SelectionStrategy(kind="grape", k=k))
            by_norm = sorted(
                range(n), key=lambda i: (-scores[i].normalized_logprob, i)
            )[:k]
            assert {c.response_id for c in result.chosen} == {
                pool.candidates[i].response_id for i in by_norm
            }


class TestSelectAll:
    def _pools_scores(self):
        pools = [make_pool(f"question {i}", [f"a{i}", f"b{i}"]) for i in range(5)]
        scores = []
        for pool in pools:
            scores.extend(scores_with_perplexities(pool, [2.0, 3.0]))
        return pools, scores

    def test_sorted_by_instruction_id(self):
        pools, scores = self._pools_scores()
        results, errors = select_all(pools, scores, SelectionStrategy(kind="grape"))
        assert not errors
        ids = [r.instruction_id for r in results]
        assert ids == sorted(ids)

    def test_errors_collected_not_raised(self):
        pools, scores = self._pools_scores()
        # drop one pool's scores entirely
        dropped = pools[2].instruction_id
        scores = [s for s in scores if s.instruction_id != dropped]
        results, errors = select_all(pools, scores, SelectionStrategy(kind="grape"))
        assert len(results) == 4
        assert len(errors) == 1 and errors[0]["instruction_id"] == dropped

    def test_k_map_overrides_k(self):
        pools, scores = self._pools_scores()
        k_map = {pools[0].instruction_id: 2}
        results, _ = select_all(pools, scores, SelectionStrategy(kind="grape", k=1), k_map=k_map)
        by_iid = {r.instruction_id: r for r in results}
        assert len(by_iid[pools[0].instruction_id].chosen) == 2
        assert all(len(by_iid[p.instruction_id].chosen) == 1 for p in pools[1:])


class TestExport:
    def test_sorted_and_deterministic(self, tmp_path):
        pools, scores = TestSelectAll()._pools_scores()
        results, _ = select_all(pools, scores, SelectionStrategy(kind="grape"))
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_sft(results, pools, out1)
        export_sft(results, pools, out2)
        assert out1.read_bytes() == out2.read_bytes()
        rows = [json.loads(line) for line in out1.read_text(encoding="utf-8").splitlines()]
        assert len(rows) == 5
        assert all(set(r) == {"instruction", "response", "source_id", "rank_key", "strategy", "token_weights"} for r in rows)

    def test_dangling_response_is_export_error(self, tmp_path):
        pools, scores = TestSelectAll()._pools_scores()
        results, _ = select_all(pools, scores, SelectionStrategy(kind="grape"))
        with pytest.raises(ExportError):
            export_sft(results, pools[1:], tmp_path / "x.jsonl")

    def test_round_trip_reproduces_chosen_pairs(self, tmp_path):
        pools, scores = TestSelectAll()._pools_scores()
        results, _ = select_all(pools, scores, SelectionStrategy(kind="grape"))
        out = tmp_path / "selected.jsonl"
        export_sft(results, pools, out)
        # feed the export back through ingest as a fresh source
        records = []
        for i, line in enumerate(out.read_text(encoding="utf-8").splitlines()):
            row = json.loads(line)
            records.append(
                {
                    "source_id": row["source_id"],
                    "record_id": str(i),
                    "instruction": row["instruction"],
                    "response": row["response"],
                    "role_tag": "sft",
                    "reward": None,
                }
            )
        path = write_jsonl(tmp_path / "reingest.jsonl", records)
        reingested = ingest([path], PoolFilterConfig(min_candidates=1))
        got = {(p.instruction, p.candidates[0].response) for p in reingested}
        expected = set()
        by_iid = {p.instruction_id: p for p in pools}
        for result in results:
            pool = by_iid[result.instruction_id]
            expected.add((pool.instruction, pool.candidate_by_id(result.chosen[0].response_id).response))
        assert got == expected
