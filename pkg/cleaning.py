"""
cleaning.py — Filtering pipeline for raw port calls, with an audit report.

Rules run in a fixed order, each on the survivors of the previous ones:

    open_call         no arrival or no departure (turnaround not computable)
    empty_call        no operation at all, or total tonnage (U + L) is 0
    short_turnaround  turnaround < min_turnaround_hours
    outlier           turnaround > median + outlier_sigma·std for ANY cargo
                      type of the call; stats computed once on the survivors
                      of the two previous rules
    rare_combo        (unload type, load type) pair seen fewer than
                      min_combo_count times; absent sides become 'NONE'

Every removal is recorded with its rule, so
    input_size − Σ removed_by_rule == output_size.
"""

import logging
from collections import Counter
from dataclasses import dataclass

import pandas as pd
from pydantic import BaseModel, Field

from errors import DatasetExhaustedError, EmptyDatasetError
from portcalls import Dataset, PortCall, turnaround_hours
from schemas import CleaningRules

logger = logging.getLogger(__name__)

NONE_LABEL = 'NONE'

RULE_OPEN     = 'open_call'
RULE_EMPTY    = 'empty_call'
RULE_SHORT    = 'short_turnaround'
RULE_OUTLIER  = 'outlier'
RULE_COMBO    = 'rare_combo'
RULE_ORDER    = (RULE_OPEN, RULE_EMPTY, RULE_SHORT, RULE_OUTLIER, RULE_COMBO)


# ── Cargo type statistics ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class TypeStats:
    count:  int
    median: float
    std:    float

    def upper_cut(self, sigma: float) -> float:
        return self.median + sigma * self.std


CargoTypeStats = dict[str, TypeStats]


def _type_samples(calls) -> pd.DataFrame:
    """One (cargo_type, hours) row per distinct cargo type of each call."""
    rows = [
        (cargo_type, turnaround_hours(call))
        for call in calls
        for cargo_type in call.cargo_types()
    ]
    return pd.DataFrame(rows, columns=['cargo_type', 'hours'])


def cargo_type_stats(dataset) -> CargoTypeStats:
    """Per cargo type: count, lower median and population std of turnaround hours.

    A call counts toward its unload and its load cargo type; a call whose two
    types coincide counts once.
    """
    calls = list(dataset)
    if not calls:
        raise EmptyDatasetError('cannot compute cargo type stats of an empty dataset')
    samples = _type_samples(calls)
    if samples.empty:
        return {}
    grouped = samples.groupby('cargo_type', sort=True)['hours']
    counts  = grouped.count()
    medians = grouped.quantile(0.5, interpolation='lower')
    stds    = grouped.std(ddof=0)
    return {
        name: TypeStats(count=int(counts[name]), median=float(medians[name]),
                        std=float(stds[name]))
        for name in counts.index
    }


# ── Report ────────────────────────────────────────────────────────────────────

class Removal(BaseModel):
    call_id: str
    rule:    str


class CleaningReport(BaseModel):
    input_size:      int
    output_size:     int
    removed_by_rule: dict[str, int]
    removals:        list[Removal] = Field(default_factory=list)
    rules:           CleaningRules

    @property
    def balanced(self) -> bool:
        return self.input_size - sum(self.removed_by_rule.values()) == self.output_size

    def removed_ids(self, rule: str | None = None) -> list[str]:
        return [r.call_id for r in self.removals if rule is None or r.rule == rule]


# ── Rule predicates ───────────────────────────────────────────────────────────

def is_empty_call(call: PortCall) -> bool:
    return not call.operations() or call.total_tonnage() == 0


def combo_key(call: PortCall) -> tuple[str, str]:
    unload = call.unload.cargo_type if call.unload and call.unload.cargo_type else NONE_LABEL
    load   = call.load.cargo_type if call.load and call.load.cargo_type else NONE_LABEL
    return unload, load


def _is_outlier(call: PortCall, stats: CargoTypeStats, sigma: float) -> bool:
    hours = turnaround_hours(call)
    return any(
        cargo_type in stats and hours > stats[cargo_type].upper_cut(sigma)
        for cargo_type in call.cargo_types()
    )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def apply_filters(dataset: Dataset,
                  rules: CleaningRules | None = None) -> tuple[Dataset, CleaningReport]:
    """Apply the cleaning rules in order.  Returns (cleaned dataset, report)."""
    rules = rules or CleaningRules()
    if len(dataset) == 0:
        raise EmptyDatasetError('cannot clean an empty dataset')

    removals: list[Removal] = []
    survivors = list(dataset)

    def _drop(rule: str, predicate) -> None:
        nonlocal survivors
        kept = []
        for call in survivors:
            if predicate(call):
                removals.append(Removal(call_id=call.call_id, rule=rule))
            else:
                kept.append(call)
        logger.info('Rule %s removed %d calls', rule, len(survivors) - len(kept))
        survivors = kept

    _drop(RULE_OPEN, lambda c: c.is_open)
    if rules.drop_empty:
        _drop(RULE_EMPTY, is_empty_call)
    if rules.drop_short:
        _drop(RULE_SHORT, lambda c: turnaround_hours(c) < rules.min_turnaround_hours)
    if rules.drop_outliers and survivors:
        stats = cargo_type_stats(survivors)
        _drop(RULE_OUTLIER, lambda c: _is_outlier(c, stats, rules.outlier_sigma))
    if rules.drop_rare_combos:
        counts = Counter(combo_key(c) for c in survivors)
        _drop(RULE_COMBO, lambda c: counts[combo_key(c)] < rules.min_combo_count)

    by_rule = Counter(r.rule for r in removals)
    report = CleaningReport(
        input_size      = len(dataset),
        output_size     = len(survivors),
        removed_by_rule = {rule: by_rule.get(rule, 0) for rule in RULE_ORDER},
        removals        = removals,
        rules           = rules,
    )
    if not survivors:
        raise DatasetExhaustedError(
            f'all {len(dataset)} calls were removed by the cleaning rules '
            f'({", ".join(f"{k}={v}" for k, v in report.removed_by_rule.items() if v)})'
        )
    logger.info('Cleaned %d -> %d port calls', report.input_size, report.output_size)
    return dataset.with_calls(survivors), report
