"""Entangled-pair source, detection chain, time tagging and coincidences.

Two simulation fidelities are provided: rate-level (Poisson counts per
analyzer setting, used by the scheduler and analysis pipeline) and tag-level
(full timestamp streams, used to validate the coincidence engine).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .polmath import AnalyzerSetting, PolTransform, TwoQubitPolState, coincidence_prob_stokes

DEFAULT_PAIR_RATE = 2e5  # locally detected pairs/s
DEFAULT_DETECTOR_EFFICIENCY = 0.70
DEFAULT_COINCIDENCE_WINDOW = 1.6e-9  # s
TIME_RESOLUTION = 1e-12  # tag quantization, s


class SourceError(ValueError):
    """Invalid source/detection configuration or stream."""


@dataclass(frozen=True)
class PairSource:
    local_pair_rate: float = DEFAULT_PAIR_RATE
    state: TwoQubitPolState = field(default_factory=lambda: TwoQubitPolState(1.0))

    def __post_init__(self):
        if self.local_pair_rate <= 0:
            raise SourceError("local_pair_rate must be > 0")


@dataclass(frozen=True)
class DetectionChain:
    idler_transmittance: float = 1.0
    signal_efficiency: float = DEFAULT_DETECTOR_EFFICIENCY
    idler_efficiency: float = DEFAULT_DETECTOR_EFFICIENCY
    dark_rate: float = 0.0
    coincidence_window: float = DEFAULT_COINCIDENCE_WINDOW

    def __post_init__(self):
        for name in ("idler_transmittance", "signal_efficiency", "idler_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SourceError(f"{name} must be in [0, 1], got {v}")
        if self.coincidence_window <= 0:
            raise SourceError("coincidence_window must be > 0")
        if self.dark_rate < 0:
            raise SourceError("dark_rate must be >= 0")


@dataclass(frozen=True)
class TimeTagStream:
    """Sorted arrival times for one detector channel."""

    times: np.ndarray
    channel_id: str = "ch0"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1:
            raise SourceError("times must be a 1-d array")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise SourceError("time tags must be non-decreasing")
        object.__setattr__(self, "times", t)

    def shifted(self, delta: float) -> "TimeTagStream":
        return TimeTagStream(self.times + delta, self.channel_id)


def singles_rates(src: PairSource, chain: DetectionChain) -> tuple[float, float]:
    """Detected singles rates (signal, idler) behind the analyzers.

    Each analyzer passes half of an unpolarized marginal; dark counts add on
    top.  Used only for the accidental-coincidence estimate.
    """
    r_s = 0.5 * src.local_pair_rate * chain.signal_efficiency + chain.dark_rate
    r_i = (
        0.5 * src.local_pair_rate * chain.idler_transmittance * chain.idler_efficiency
        + chain.dark_rate
    )
    return r_s, r_i


def accidental_rate(src: PairSource, chain: DetectionChain) -> float:
    r_s, r_i = singles_rates(src, chain)
    return r_s * r_i * chain.coincidence_window


def expected_coincidence_rate(
    src: PairSource,
    chain: DetectionChain,
    a: AnalyzerSetting,
    b: AnalyzerSetting,
    idler_transform: PolTransform | None = None,
) -> float:
    """Expected single-port coincidence rate at analyzer settings (a, b).

    The factor 2 normalizes against the signal analyzer projection: summing
    the idler's two output ports at matched bases recovers the full
    transmitted-pair rate.  Accidentals are added on top.
    """
    p = coincidence_prob_stokes(src.state, a, b, idler_transform)
    rate = (
        src.local_pair_rate
        * chain.idler_transmittance
        * chain.signal_efficiency
        * chain.idler_efficiency
        * 2.0
        * p
    )
    return rate + accidental_rate(src, chain)


def port_rates(
    src: PairSource,
    chain: DetectionChain,
    a: AnalyzerSetting,
    b: AnalyzerSetting,
    idler_transform: PolTransform | None = None,
) -> np.ndarray:
    """Rates for the four port combinations (pp, pf, fp, ff)."""
    a_perp, b_perp = a.orthogonal(), b.orthogonal()
    return np.array(
        [
            expected_coincidence_rate(src, chain, a, b, idler_transform),
            expected_coincidence_rate(src, chain, a, b_perp, idler_transform),
            expected_coincidence_rate(src, chain, a_perp, b, idler_transform),
            expected_coincidence_rate(src, chain, a_perp, b_perp, idler_transform),
        ]
    )


def sample_counts(rate: float, duration: float, rng: np.random.Generator) -> int:
    """Poisson count with mean rate * duration."""
    if rate < 0:
        raise SourceError("rate must be >= 0")
    if duration <= 0:
        raise SourceError("duration must be > 0")
    if rate == 0:
        return 0
    return int(rng.poisson(rate * duration))


def generate_timetags(
    rate: float, duration: float, rng: np.random.Generator, channel_id: str = "ch0"
) -> TimeTagStream:
    """Homogeneous Poisson process: exponential inter-arrival times."""
    if rate < 0 or duration <= 0:
        raise SourceError("rate must be >= 0 and duration > 0")
    if rate == 0:
        return TimeTagStream(np.empty(0), channel_id)
    n_guess = int(rate * duration + 10 * np.sqrt(rate * duration) + 10)
    tags = np.cumsum(rng.exponential(1.0 / rate, size=n_guess))
    while tags.size and tags[-1] < duration:
        extra = np.cumsum(rng.exponential(1.0 / rate, size=n_guess)) + tags[-1]
        tags = np.concatenate([tags, extra])
    tags = tags[tags < duration]
    tags = np.round(tags / TIME_RESOLUTION) * TIME_RESOLUTION
    return TimeTagStream(np.sort(tags), channel_id)


def find_coincidences(
    signal: TimeTagStream,
    idler: TimeTagStream,
    window: float,
    relative_delay: float = 0.0,
) -> int:
    """Count coincidences between two sorted tag streams.

    Idler tags are shifted back by ``relative_delay`` (the fixed offset
    introduced by the parallel timing fiber), then each idler tag is matched
    greedily to the nearest unused signal tag within +-window/2.
    """
    if window <= 0:
        raise SourceError("window must be > 0")
    return int(
        _kernels.greedy_match(
            signal.times, idler.times - relative_delay, window / 2.0
        )
    )


def write_timetags_csv(path, *streams: TimeTagStream) -> None:
    """Two-column export (channel_id, time_ps), merged in time order."""
    rows = []
    for s in streams:
        rows.extend((s.channel_id, int(round(t / TIME_RESOLUTION))) for t in s.times)
    rows.sort(key=lambda r: (r[1], r[0]))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel_id", "time_ps"])
        writer.writerows(rows)


def read_timetags_csv(path) -> dict[str, TimeTagStream]:
    """Inverse of ``write_timetags_csv``: one stream per channel_id."""
    by_channel: dict[str, list[float]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            by_channel.setdefault(row["channel_id"], []).append(
                int(row["time_ps"]) * TIME_RESOLUTION
            )
    return {
        cid: TimeTagStream(np.sort(np.array(times)), cid)
        for cid, times in by_channel.items()
    }
