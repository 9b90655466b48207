"""Character-reference mappings and style-reference selection.

A mapping assigns to each (character, component-index) the candidate reference
characters that share that component (component level) or at least one of its
strokes (stroke level). Selection fills k reference slots: one draw per
component entry, the rest uniform over the reference set; during the one-shot
training phase, with a small probability the whole list collapses to k copies
of a single reference to teach single-reference generation.

A decomposition table is the plain-dict view produced by both
CorpusManifest.decomp_table() and the real-corpus importer:
char_id -> [{component_id, stroke_ids, slot}, ...].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MappingError(ValueError):
    pass


LEVELS = ("component", "stroke")


@dataclass(frozen=True)
class ReferenceMapping:
    level: str
    entries: dict  # (char_id, comp_index) -> tuple of candidate ref char_ids
    reference_set: tuple

    def to_json(self) -> str:
        return json.dumps(
            {
                "level": self.level,
                "reference_set": list(self.reference_set),
                "entries": {f"{c}:{i}": list(v) for (c, i), v in self.entries.items()},
            }
        )

    @staticmethod
    def from_json(text: str) -> "ReferenceMapping":
        d = json.loads(text)
        entries = {}
        for key, v in d["entries"].items():
            c, i = key.split(":")
            entries[(int(c), int(i))] = tuple(v)
        return ReferenceMapping(
            level=d["level"], entries=entries, reference_set=tuple(d["reference_set"])
        )


@dataclass(frozen=True)
class SelectionPolicy:
    k: int = 6
    p: float = 0.1
    p_hat: float = 0.1
    one_shot_phase_fraction: float = 0.1

    def __post_init__(self):
        if self.p + self.p_hat > 1.0:
            raise MappingError("p + p_hat must not exceed 1")
        if self.k < 1:
            raise MappingError("k must be positive")

    def validate_against(self, decomp_table: dict):
        max_mc = max(len(v) for v in decomp_table.values())
        if self.k < max_mc:
            raise MappingError(f"k={self.k} smaller than the largest decomposition ({max_mc})")


def _char_components(decomp_table: dict, char_id: int) -> list:
    if char_id not in decomp_table:
        raise MappingError(f"unknown char_id {char_id}")
    return decomp_table[char_id]


def build_mapping(level: str, decomp_table: dict, reference_set) -> ReferenceMapping:
    """Entries for every (char, component index) in the table; candidate lists
    are sorted by char_id and may be empty (recorded, not dropped)."""
    if level not in LEVELS:
        raise MappingError(f"level must be one of {LEVELS}")
    reference_set = tuple(reference_set)
    if not reference_set:
        raise MappingError("reference set is empty")
    for r in reference_set:
        if r not in decomp_table:
            raise MappingError(f"reference char {r} not in the decomposition table")
    ref_components = {r: {e["component_id"] for e in decomp_table[r]} for r in reference_set}
    ref_strokes = {
        r: {s for e in decomp_table[r] for s in e["stroke_ids"]} for r in reference_set
    }
    entries = {}
    for char_id, comps in decomp_table.items():
        for i, entry in enumerate(comps):
            if level == "component":
                cands = [r for r in reference_set if entry["component_id"] in ref_components[r]]
            else:
                strokes = set(entry["stroke_ids"])
                cands = [r for r in reference_set if strokes & ref_strokes[r]]
            entries[(char_id, i)] = tuple(sorted(cands))
    return ReferenceMapping(level=level, entries=entries, reference_set=reference_set)


@dataclass(frozen=True)
class ReferenceMappings:
    """Both mapping levels built over one reference set."""

    component: ReferenceMapping
    stroke: ReferenceMapping

    @staticmethod
    def build(decomp_table: dict, reference_set) -> "ReferenceMappings":
        return ReferenceMappings(
            component=build_mapping("component", decomp_table, reference_set),
            stroke=build_mapping("stroke", decomp_table, reference_set),
        )


def select_branch(policy: SelectionPolicy, phase: str, u: float) -> str:
    """Branch from a single uniform draw: absolute probabilities
    (1-p-p_hat, p, p_hat) during the one-shot phase, (1-p, p) otherwise."""
    if phase == "one_shot_phase":
        if u < policy.p_hat:
            return "one_shot"
        if u < policy.p_hat + policy.p:
            return "stroke"
        return "component"
    if u < policy.p:
        return "stroke"
    return "component"


def select_references(
    char_id: int,
    mappings: ReferenceMappings,
    policy: SelectionPolicy,
    phase: str = "normal",
    rng: np.random.Generator | None = None,
) -> list:
    """k reference char_ids for one target character. Positions 0..m_c-1 come
    from the active mapping's per-component entries (empty entries fall back to
    the other level, then to a uniform draw); the rest are uniform fills."""
    if phase not in ("normal", "one_shot_phase"):
        raise MappingError(f"unknown phase {phase!r}")
    if rng is None:
        raise MappingError("selection needs a caller-owned rng")
    refs = mappings.component.reference_set
    if not refs:
        raise MappingError("reference set is empty")
    branch = select_branch(policy, phase, float(rng.random()))
    if branch == "one_shot":
        one = refs[int(rng.integers(len(refs)))]
        return [one] * policy.k
    primary = mappings.stroke if branch == "stroke" else mappings.component
    secondary = mappings.component if branch == "stroke" else mappings.stroke
    m_c = 0
    out = []
    while (char_id, m_c) in primary.entries:
        cands = primary.entries[(char_id, m_c)]
        if not cands:
            cands = secondary.entries[(char_id, m_c)]
        if cands:
            out.append(cands[int(rng.integers(len(cands)))])
        else:
            out.append(refs[int(rng.integers(len(refs)))])
        m_c += 1
    if m_c == 0:
        raise MappingError(f"char {char_id} has no mapping entries")
    if m_c > policy.k:
        raise MappingError(f"char {char_id} has {m_c} components but k={policy.k}")
    for _ in range(policy.k - m_c):
        out.append(refs[int(rng.integers(len(refs)))])
    return out


@dataclass(frozen=True)
class CoverageStats:
    component_coverage: float
    stroke_coverage: float
    uncovered_components: tuple
    n_components_used: int
    n_strokes_used: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "component_coverage": self.component_coverage,
                "stroke_coverage": self.stroke_coverage,
                "uncovered_components": list(self.uncovered_components),
                "n_components_used": self.n_components_used,
                "n_strokes_used": self.n_strokes_used,
            }
        )


def coverage_report(reference_set, decomp_table: dict) -> CoverageStats:
    """Fraction of the components/strokes appearing in the table that some
    reference character contains."""
    used_comps = {e["component_id"] for v in decomp_table.values() for e in v}
    used_strokes = {s for v in decomp_table.values() for e in v for s in e["stroke_ids"]}
    ref_comps: set = set()
    ref_strokes: set = set()
    for r in reference_set:
        for e in _char_components(decomp_table, r):
            ref_comps.add(e["component_id"])
            ref_strokes.update(e["stroke_ids"])
    comp_cov = len(used_comps & ref_comps) / len(used_comps) if used_comps else 1.0
    stroke_cov = len(used_strokes & ref_strokes) / len(used_strokes) if used_strokes else 1.0
    return CoverageStats(
        component_coverage=comp_cov,
        stroke_coverage=stroke_cov,
        uncovered_components=tuple(sorted(used_comps - ref_comps)),
        n_components_used=len(used_comps),
        n_strokes_used=len(used_strokes),
    )
