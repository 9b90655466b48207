"""Reference-mapping construction and selection contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphsynth.corpus import CorpusConfig, build_corpus
from glyphsynth.mapping import (
    CoverageStats,
    MappingError,
    ReferenceMapping,
    ReferenceMappings,
    SelectionPolicy,
    build_mapping,
    coverage_report,
    select_branch,
    select_references,
)


def _entry(component_id, stroke_ids):
    return {"component_id": component_id, "stroke_ids": list(stroke_ids), "slot": [0, 0, 1, 1]}


@pytest.fixture()
def tiny_table():
    # target char 0 has components A=10 (strokes {1}), B=11 (strokes {2, 3});
    # r1 contains A, r2 contains B, r3 shares stroke 1 but not component A
    return {
        0: [_entry(10, [1]), _entry(11, [2, 3])],
        100: [_entry(10, [1]), _entry(12, [4])],  # r1
        101: [_entry(11, [2, 3])],  # r2
        102: [_entry(13, [1])],  # r3
    }


@pytest.fixture(scope="module")
def corpus():
    return build_corpus(CorpusConfig(n_components=24, n_strokes=6, n_chars=60,
                                     n_styles=6, ref_set_size=14, seed=5))


class TestBuildMapping:
    def test_component_level_definitional(self, tiny_table):
        m = build_mapping("component", tiny_table, [100, 101])
        assert m.entries[(0, 0)] == (100,)
        assert m.entries[(0, 1)] == (101,)

    def test_stroke_vs_component_membership(self, tiny_table):
        comp = build_mapping("component", tiny_table, [100, 101, 102])
        stroke = build_mapping("stroke", tiny_table, [100, 101, 102])
        assert 102 in stroke.entries[(0, 0)]  # shares stroke 1
        assert 102 not in comp.entries[(0, 0)]  # does not contain component 10

    def test_stroke_entries_superset_of_component(self, corpus):
        table = corpus.decomp_table()
        comp = build_mapping("component", table, corpus.ref_chars)
        stroke = build_mapping("stroke", table, corpus.ref_chars)
        for key, cands in comp.entries.items():
            assert set(cands) <= set(stroke.entries[key])

    def test_full_cover_set_gives_nonempty_entries(self, corpus):
        # brute-force membership scan over the synthetic table
        table = corpus.decomp_table()
        m = build_mapping("component", table, corpus.ref_chars)
        ref_comps = {r: {e["component_id"] for e in table[r]} for r in corpus.ref_chars}
        for cid in corpus.train_chars + corpus.test_chars:
            for i, e in enumerate(table[cid]):
                expected = tuple(sorted(r for r in corpus.ref_chars
                                        if e["component_id"] in ref_comps[r]))
                assert m.entries[(cid, i)] == expected
                assert expected  # cover set: never empty

    def test_empty_entries_recorded_not_dropped(self, tiny_table):
        m = build_mapping("component", tiny_table, [102])
        assert m.entries[(0, 0)] == ()
        assert (0, 1) in m.entries

    def test_rejections(self, tiny_table):
        with pytest.raises(MappingError):
            build_mapping("component", tiny_table, [])
        with pytest.raises(MappingError):
            build_mapping("component", tiny_table, [999])
        with pytest.raises(MappingError):
            build_mapping("radical", tiny_table, [100])

    def test_json_roundtrip(self, tiny_table):
        m = build_mapping("stroke", tiny_table, [100, 101, 102])
        m2 = ReferenceMapping.from_json(m.to_json())
        assert m2 == m


class TestSelectReferences:
    def test_component_branch_layout(self, tiny_table):
        maps = ReferenceMappings.build(tiny_table, [100, 101, 102])
        policy = SelectionPolicy(k=6, p=0.0, p_hat=0.0)
        rng = np.random.default_rng(0)
        out = select_references(0, maps, policy, "normal", rng)
        assert len(out) == 6
        assert out[0] == 100  # only 100 contains component 10
        assert out[1] == 101  # only 101 contains component 11
        assert all(r in (100, 101, 102) for r in out[2:])

    def test_one_shot_branch_returns_k_identical(self, tiny_table):
        maps = ReferenceMappings.build(tiny_table, [100, 101, 102])
        policy = SelectionPolicy(k=6, p=0.0, p_hat=1.0)
        out = select_references(0, maps, policy, "one_shot_phase", np.random.default_rng(1))
        assert len(set(out)) == 1 and len(out) == 6

    def test_branch_frequencies(self):
        # 100k single-draw branches with p = p_hat = 0.1 in the one-shot phase
        policy = SelectionPolicy(k=6, p=0.1, p_hat=0.1)
        rng = np.random.default_rng(7)
        u = rng.random(100_000)
        branches = [select_branch(policy, "one_shot_phase", float(x)) for x in u]
        n = len(branches)
        freq = {b: branches.count(b) / n for b in ("component", "stroke", "one_shot")}
        assert abs(freq["component"] - 0.8) < 0.01
        assert abs(freq["stroke"] - 0.1) < 0.01
        assert abs(freq["one_shot"] - 0.1) < 0.01

    def test_normal_phase_never_one_shot(self):
        policy = SelectionPolicy(k=6, p=0.1, p_hat=0.9)
        rng = np.random.default_rng(3)
        assert all(
            select_branch(policy, "normal", float(x)) in ("component", "stroke")
            for x in rng.random(1000)
        )

    def test_selection_validity_and_determinism(self, corpus):
        table = corpus.decomp_table()
        maps = ReferenceMappings.build(table, corpus.ref_chars)
        policy = SelectionPolicy(k=6)
        for cid in corpus.train_chars[:20]:
            a = select_references(cid, maps, policy, "one_shot_phase", np.random.default_rng(cid))
            b = select_references(cid, maps, policy, "one_shot_phase", np.random.default_rng(cid))
            assert a == b
            assert len(a) == 6
            assert all(r in set(corpus.ref_chars) for r in a)

    def test_component_slots_share_components(self, corpus):
        table = corpus.decomp_table()
        maps = ReferenceMappings.build(table, corpus.ref_chars)
        policy = SelectionPolicy(k=6, p=0.0, p_hat=0.0)
        rng = np.random.default_rng(11)
        for cid in corpus.train_chars[:20]:
            out = select_references(cid, maps, policy, "normal", rng)
            for i, e in enumerate(table[cid]):
                ref_comps = {x["component_id"] for x in table[out[i]]}
                assert e["component_id"] in ref_comps

    def test_empty_entry_fallback_chain(self, tiny_table):
        # only 102 in the reference set: component entries for char 0 are empty,
        # stroke entry for component 0 holds 102, component 1 falls to uniform
        maps = ReferenceMappings.build(tiny_table, [102])
        policy = SelectionPolicy(k=3, p=0.0, p_hat=0.0)
        out = select_references(0, maps, policy, "normal", np.random.default_rng(2))
        assert out == [102, 102, 102]

    def test_duplicates_allowed_in_fill(self, tiny_table):
        maps = ReferenceMappings.build(tiny_table, [100])
        policy = SelectionPolicy(k=6, p=0.0, p_hat=0.0)
        out = select_references(0, maps, policy, "normal", np.random.default_rng(4))
        assert out.count(100) == 6

    def test_errors(self, tiny_table):
        maps = ReferenceMappings.build(tiny_table, [100])
        with pytest.raises(MappingError):
            select_references(0, maps, SelectionPolicy(k=6), "normal", None)
        with pytest.raises(MappingError):
            select_references(0, maps, SelectionPolicy(k=1, p=0.0, p_hat=0.0),
                              "normal", np.random.default_rng(0))
        with pytest.raises(MappingError):
            select_references(999, maps, SelectionPolicy(k=6), "normal",
                              np.random.default_rng(0))

    def test_policy_invariants(self):
        with pytest.raises(MappingError):
            SelectionPolicy(k=6, p=0.6, p_hat=0.5)
        SelectionPolicy(k=6, p=0.1, p_hat=0.1).validate_against({0: [_entry(1, [0])]})
        with pytest.raises(MappingError):
            SelectionPolicy(k=1).validate_against({0: [_entry(1, [0]), _entry(2, [1])]})


class TestCoverageReport:
    def test_full_cover(self, corpus):
        stats = coverage_report(corpus.ref_chars, corpus.decomp_table())
        assert stats.component_coverage == 1.0
        assert stats.uncovered_components == ()

    def test_empty_set(self, corpus):
        stats = coverage_report([], corpus.decomp_table())
        assert stats.component_coverage == 0.0
        assert stats.stroke_coverage == 0.0
        used = {e["component_id"] for v in corpus.decomp_table().values() for e in v}
        assert set(stats.uncovered_components) == used

    def test_monotone_under_nested_sets(self, corpus):
        # oracle: recompute coverage per nested subset
        table = corpus.decomp_table()
        refs = list(corpus.ref_chars)
        prev_c, prev_s = 0.0, 0.0
        for n in (1, 3, 7, len(refs)):
            stats = coverage_report(refs[:n], table)
            assert stats.component_coverage >= prev_c
            assert stats.stroke_coverage >= prev_s
            prev_c, prev_s = stats.component_coverage, stats.stroke_coverage

    def test_json(self, corpus):
        stats = coverage_report(corpus.ref_chars[:2], corpus.decomp_table())
        import json

        d = json.loads(stats.to_json())
        assert set(d) == {"component_coverage", "stroke_coverage",
                          "uncovered_components", "n_components_used", "n_strokes_used"}


class TestMappingSoundnessProperty:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_candidates_contain_their_component(self, corpus, seed):
        table = corpus.decomp_table()
        rng = np.random.default_rng(seed)
        refs = rng.choice(corpus.ref_chars, size=5, replace=False).tolist()
        m = build_mapping("component", table, refs)
        for (cid, i), cands in m.entries.items():
            comp = table[cid][i]["component_id"]
            for r in cands:
                assert comp in {e["component_id"] for e in table[r]}
