"""Per-round records and their CSV serialization."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from typing import Iterable, List, Optional, Sequence


@dataclass(frozen=True)
class RoundRecord:
    round: int
    leader_id: Optional[int]
    leader_honest: Optional[bool]  # ground truth; None when no leader
    block_empty: bool
    illicit_tx_count: int
    steps_used: int
    total_votes_step2: float
    effective_votes_step2: float
    attenuation: float
    ratio_hm: Optional[float]
    l_hat: Optional[float]
    compensated_committee: float


RECORD_FIELDS = [f.name for f in fields(RoundRecord)]


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def records_to_csv(records: Iterable[RoundRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for rec in records:
        writer.writerow([format_value(v) for v in astuple(rec)])
    return buf.getvalue()


def write_records(path, records: Iterable[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


@dataclass(frozen=True)
class Summary:
    rounds: int
    empty_block_rate: float
    illicit_inclusion_rate: float  # share of rounds whose block carries illicit payments
    mean_ratio_hm: Optional[float]
    mean_l_hat: Optional[float]
    mean_steps: float


def summarize(records: Sequence[RoundRecord]) -> Summary:
    n = len(records)
    if n == 0:
        return Summary(0, 0.0, 0.0, None, None, 0.0)
    ratios = [r.ratio_hm for r in records if r.ratio_hm is not None]
    l_hats = [r.l_hat for r in records if r.l_hat is not None]
    return Summary(
        rounds=n,
        empty_block_rate=sum(r.block_empty for r in records) / n,
        illicit_inclusion_rate=sum(r.illicit_tx_count > 0 for r in records) / n,
        mean_ratio_hm=sum(ratios) / len(ratios) if ratios else None,
        mean_l_hat=sum(l_hats) / len(l_hats) if l_hats else None,
        mean_steps=sum(r.steps_used for r in records) / n,
    )


SWEEP_FIELDS = ["parameter", "value", "rounds", "mean_ratio_hm", "mean_l_hat", "empty_block_rate",
                "illicit_inclusion_rate", "mean_illicit_reputation"]


def sweep_to_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_FIELDS)
    for row in rows:
        writer.writerow([format_value(row.get(name)) for name in SWEEP_FIELDS])
    return buf.getvalue()
