"""Token error rate and structural look-ahead latency accounting."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int

    @property
    def total(self):
        return self.substitutions + self.insertions + self.deletions


def error_rate(hyp, ref):
    """Levenshtein distance / len(ref), with operation counts.

    Tie-breaking is deterministic: substitution over insertion over
    deletion.  An empty reference with a non-empty hypothesis scores
    ``len(hyp) / 1`` by convention.
    """
    hyp = list(hyp)
    ref = list(ref)
    n, m = len(hyp), len(ref)
    # dp[i][j] = (cost, subs, ins, dels) aligning hyp[:i] against ref[:j]
    dp = [[None] * (m + 1) for _ in range(n + 1)]
    dp[0][0] = (0, 0, 0, 0)
    for i in range(1, n + 1):
        c = dp[i - 1][0]
        dp[i][0] = (c[0] + 1, c[1], c[2] + 1, c[3])
    for j in range(1, m + 1):
        c = dp[0][j - 1]
        dp[0][j] = (c[0] + 1, c[1], c[2], c[3] + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            match = hyp[i - 1] == ref[j - 1]
            diag = dp[i - 1][j - 1]
            sub = (diag[0] + (0 if match else 1), diag[1] + (0 if match else 1), diag[2], diag[3])
            up = dp[i - 1][j]
            ins = (up[0] + 1, up[1], up[2] + 1, up[3])
            left = dp[i][j - 1]
            dele = (left[0] + 1, left[1], left[2], left[3] + 1)
            best = sub
            if ins[0] < best[0]:
                best = ins
            if dele[0] < best[0]:
                best = dele
            dp[i][j] = best
    cost, subs, ins, dels = dp[n][m]
    counts = EditCounts(subs, ins, dels)
    rate = cost / m if m else float(cost)
    return rate, counts


@dataclass(frozen=True)
class TokenEvent:
    """One surfaced token during streaming.

    ``region_end`` is the absolute end (exclusive) of the block target
    region whose features produced the token; ``surfaced_clock`` is the
    orchestrator clock (frames received) when the token became visible.
    """

    token: int
    emission_frame: int
    region_end: int
    surfaced_clock: int
    committed: bool


@dataclass(frozen=True)
class LatencyReport:
    mean_frames: float
    max_frames: int
    mean_ms: float
    max_ms: int
    n_regions: int


def measure_latency(trace, frame_ms=32):
    """Structural look-ahead delay per covered region (compute time excluded).

    For every region a token was surfaced from, the delay is the earliest
    ``surfaced_clock - region_end`` across all paths (the provisional path
    covers regions as soon as their frames arrive, so multiple-latency
    systems report 0).
    """
    if not trace:
        raise ContractError("measure_latency: empty trace")
    per_region = {}
    for ev in trace:
        if not isinstance(ev, TokenEvent):
            raise ContractError("measure_latency: trace must contain TokenEvents")
        delay = ev.surfaced_clock - ev.region_end
        if delay < 0:
            raise ContractError("measure_latency: token surfaced before its region ended")
        cur = per_region.get(ev.region_end)
        per_region[ev.region_end] = delay if cur is None else min(cur, delay)
    delays = list(per_region.values())
    mean = sum(delays) / len(delays)
    return LatencyReport(
        mean_frames=mean,
        max_frames=max(delays),
        mean_ms=mean * frame_ms,
        max_ms=max(delays) * frame_ms,
        n_regions=len(delays),
    )
