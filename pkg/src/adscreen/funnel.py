"""Funnel statistics shared by the simulator and the screening service."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class FunnelStats:
    day: int
    impressions: int = 0
    clicks: int = 0
    questionnaire_starts: int = 0
    completions: int = 0
    high_scs_conversions: int = 0

    def __post_init__(self):
        chain = (
            self.impressions,
            self.clicks,
            self.questionnaire_starts,
            self.completions,
            self.high_scs_conversions,
        )
        for a, b in zip(chain, chain[1:]):
            if a < b:
                raise ValueError(f"funnel ordering violated on day {self.day}: {chain}")

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions if self.impressions else 0.0

    @property
    def conversion_rate(self) -> float:
        return self.high_scs_conversions / self.clicks if self.clicks else 0.0

    @property
    def completion_conversion_rate(self) -> float:
        return self.high_scs_conversions / self.completions if self.completions else 0.0


def _mean_sd(xs: Sequence[float]) -> tuple[float, float]:
    m = sum(xs) / len(xs)
    var = sum((x - m) ** 2 for x in xs) / len(xs)
    return m, math.sqrt(var)


def funnel_report(stats: Sequence[FunnelStats], window: int | None = None) -> dict:
    """Per-day rows plus mean/sd summaries over the trailing window."""
    rows = [
        {
            "day": s.day,
            "impressions": s.impressions,
            "clicks": s.clicks,
            "ctr": s.ctr,
            "starts": s.questionnaire_starts,
            "completions": s.completions,
            "conversions": s.high_scs_conversions,
            "conversion_rate": s.conversion_rate,
            "completion_conversion_rate": s.completion_conversion_rate,
        }
        for s in stats
    ]
    report = {"rows": rows}
    if window is not None:
        if window > len(stats) or window < 1:
            raise ValueError(f"window {window} out of range for a {len(stats)}-day series")
        tail = stats[-window:]
        cr_mean, cr_sd = _mean_sd([s.conversion_rate for s in tail])
        imp_mean, imp_sd = _mean_sd([float(s.impressions) for s in tail])
        report["summary"] = {
            "window": window,
            "conversion_rate_mean": cr_mean,
            "conversion_rate_sd": cr_sd,
            "impressions_mean": imp_mean,
            "impressions_sd": imp_sd,
        }
    return report


FUNNEL_CSV_HEADER = [
    "day",
    "impressions",
    "clicks",
    "ctr",
    "starts",
    "completions",
    "conversions",
    "conversion_rate",
    "completion_conversion_rate",
]
