"""Guidance bookkeeping: cycle position, timestep choice, CFG scale,
view ordering, and the phase timetable.

A run walks a step counter i_step through a timetable of phases. The cycle
position alpha_step in [0, 1) drives both the diffusion timestep (high
noise at the start of a cycle, low at the end) and the guidance scale
(weak early, strong late).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConfigError

CFG_BASE = 7.5  # lower bound of the dynamic guidance scale


class Mode(enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


class Phase(enum.Enum):
    LOCAL_RGB = "local_rgb"
    GLOBAL_ADAPTIVE = "global_adaptive"
    GLOBAL_FIX = "global_fix"
    GLOBAL_FREE = "global_free"
    LOCAL = "local"

    @property
    def mode(self) -> Mode:
        return Mode.LOCAL if self in (Phase.LOCAL, Phase.LOCAL_RGB) else Mode.GLOBAL


def alpha_step(i_step: int, n_view: int, n_opt: int, mode: Mode) -> float:
    """Normalized position within the current optimization cycle.

    GLOBAL shares one noise level across a sweep of all views:
        ((i_step // n_view) % n_opt) / n_opt
    LOCAL ramps per view:
        (i_step % n_opt) / n_opt
    """
    if n_view < 1 or n_opt < 1:
        raise ValueError("n_view and n_opt must be >= 1")
    if mode is Mode.GLOBAL:
        return ((i_step // n_view) % n_opt) / n_opt
    return (i_step % n_opt) / n_opt


def sample_timestep(alpha: float, t_total: int, t_min: int, t_max: int) -> int:
    """Timestep for the cycle position: round((1 - sqrt(alpha)) * T), clipped.

    Monotone non-increasing in alpha; early cycle positions get high noise.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha_step {alpha} outside [0, 1]")
    if not 0 <= t_min <= t_max <= t_total:
        raise ConfigError("weights.dssd", f"need 0 <= t_min <= t_max <= t_total, got {t_min}, {t_max}, {t_total}")
    t = round((1.0 - alpha**0.5) * t_total)
    return min(max(t, t_min), t_max)


def dynamic_cfg(alpha: float, cfg_max: float) -> float:
    """Guidance scale max(7.5, cfg_max * alpha^2), in [7.5, cfg_max]."""
    if cfg_max < CFG_BASE:
        raise ValueError(f"cfg_max must be >= {CFG_BASE}")
    return max(CFG_BASE, cfg_max * alpha * alpha)


def view_order_indices(views: Sequence, start: int = 0) -> list:
    """Indices of `views` sorted along the azimuth ring, rotated to `start`."""
    if len(views) == 0:
        raise ValueError("need at least one view")
    ordered = sorted(range(len(views)), key=lambda i: (views[i].azimuth_index, i))
    pivot = 0
    for pos, idx in enumerate(ordered):
        if views[idx].azimuth_index >= start:
            pivot = pos
            break
    return ordered[pivot:] + ordered[:pivot]


def view_order(views: Sequence, start: int = 0) -> list:
    """Views sorted along the azimuth ring, rotated to begin at `start`.

    Consecutive optimization steps then visit adjacent views. Duplicate
    azimuth indices keep their input order.
    """
    return [views[i] for i in view_order_indices(views, start)]


@dataclass
class GuidanceState:
    """Scheduler ledger for one optimization step."""

    i_step: int
    n_view: int
    n_opt: int
    mode: Mode

    @property
    def alpha(self) -> float:
        return alpha_step(self.i_step, self.n_view, self.n_opt, self.mode)

    def timestep(self, t_total: int, t_min: int, t_max: int) -> int:
        return sample_timestep(self.alpha, t_total, t_min, t_max)

    def cfg_scale(self, cfg_max: float) -> float:
        return dynamic_cfg(self.alpha, cfg_max)


@dataclass(frozen=True)
class TimetableEntry:
    start: int
    end: int
    phase: Phase
    rgb_overlay: bool = False


@dataclass
class ModeTimetable:
    """Ordered phase ranges covering [0, total_steps) exactly."""

    entries: list = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("schedule.timetable", "timetable is empty")
        self.entries = sorted(self.entries, key=lambda e: e.start)
        cursor = 0
        for entry in self.entries:
            if entry.end <= entry.start:
                raise ConfigError(
                    "schedule.timetable", f"empty or inverted range [{entry.start}, {entry.end})"
                )
            if entry.start > cursor:
                raise ConfigError(
                    "schedule.timetable", f"uncovered range [{cursor}, {entry.start})"
                )
            if entry.start < cursor:
                raise ConfigError(
                    "schedule.timetable", f"overlapping range at step {entry.start}"
                )
            cursor = entry.end
        if self.entries[0].start != 0:
            raise ConfigError("schedule.timetable", "timetable must start at step 0")

    @property
    def total_steps(self) -> int:
        return self.entries[-1].end

    def entry_at(self, i_step: int) -> TimetableEntry:
        if not 0 <= i_step < self.total_steps:
            raise ValueError(f"step {i_step} outside [0, {self.total_steps})")
        for entry in self.entries:
            if entry.start <= i_step < entry.end:
                return entry
        raise AssertionError("validated timetable had a gap")  # unreachable


def phase_at(i_step: int, timetable: ModeTimetable) -> TimetableEntry:
    """The phase (and RGB-overlay flag) governing step `i_step`."""
    return timetable.entry_at(i_step)


def default_timetable(alternation_block: int = 100) -> ModeTimetable:
    """The stock 2800-step schedule.

    Global adaptive warmup with an RGB-guidance overlay window, then
    alternating fixed/free global sweeps, then local refinement.
    """
    entries = [
        TimetableEntry(0, 100, Phase.GLOBAL_ADAPTIVE),
        TimetableEntry(100, 600, Phase.GLOBAL_ADAPTIVE, rgb_overlay=True),
        TimetableEntry(600, 1000, Phase.GLOBAL_ADAPTIVE),
    ]
    start = 1000
    block = 0
    while start < 1900:
        end = min(start + alternation_block, 1900)
        phase = Phase.GLOBAL_FIX if block % 2 == 0 else Phase.GLOBAL_FREE
        entries.append(TimetableEntry(start, end, phase))
        start = end
        block += 1
    entries.append(TimetableEntry(1900, 2800, Phase.LOCAL))
    return ModeTimetable(entries)
