"""Unit-selection synthesis over the animation database.

Candidates matching each requested label are scored by how much they must
be time-warped (target cost) and how badly their boundaries clash with
their neighbors (join cost); a Viterbi pass picks the globally cheapest
sequence. The winning units are then linearly time-warped and cross-faded
into a new clip.

Costs are deliberately simple and fully parameterized; candidate pruning
hooks are documented in the README but unimplemented since desk-scale
databases never need them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anim_db import AnimationClip, AnimationUnit
from .errors import NoCandidate
from .rotations import slerp


@dataclass(frozen=True)
class SynthesisRequest:
    """Label/duration sequence to synthesize, plus cost weighting."""

    items: tuple[tuple[str, float], ...]
    w_target: float = 1.0
    w_join: float = 1.0
    blend_window: float = 0.04   # seconds of cross-fade at each junction
    velocity_weight: float = 0.01  # seconds; converts cm/s mismatch to cm

    def __post_init__(self):
        if not self.items:
            raise ValueError("request needs at least one item")
        if any(d <= 0 for _, d in self.items):
            raise ValueError("requested durations must be positive")
        if self.w_target < 0 or self.w_join < 0:
            raise ValueError("cost weights must be non-negative")


def parse_request(text: str) -> tuple[tuple[str, float], ...]:
    """Parse the ``label duration_s; label duration_s; ...`` request syntax."""
    items = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 2:
            raise ValueError(f"bad request item {chunk!r}; expected 'label seconds'")
        try:
            items.append((parts[0], float(parts[1])))
        except ValueError:
            raise ValueError(f"bad duration in request item {chunk!r}") from None
    if not items:
        raise ValueError("empty synthesis request")
    return tuple(items)


def target_cost(unit: AnimationUnit, requested: float) -> float:
    """Duration mismatch cost |log(unit duration / requested)|.

    Symmetric in stretch and compression; zero for an exact match.
    """
    if requested <= 0:
        raise ValueError("requested duration must be positive")
    return abs(math.log(unit.duration / requested))


def join_cost(
    left: AnimationUnit, right: AnimationUnit, velocity_weight: float = 0.01
) -> float:
    """Boundary discontinuity between two concatenated units.

    Zero for units that were adjacent in the corpus (their boundary is the
    same sample); otherwise the Euclidean gap across all tracked points
    plus a velocity mismatch term scaled by `velocity_weight`.
    """
    if right.source_index == left.source_index + 1:
        return 0.0
    dp = right.first_positions - left.last_positions
    dv = right.first_velocities - left.last_velocities
    return float(
        np.sqrt(np.sum(dp * dp)) + velocity_weight * np.sqrt(np.sum(dv * dv))
    )


@dataclass(frozen=True)
class SynthesisPlan:
    units: tuple[AnimationUnit, ...]
    warp_factors: tuple[float, ...]   # requested / unit duration
    requested: tuple[float, ...]
    target_costs: tuple[float, ...]
    join_costs: tuple[float, ...]     # one per junction
    total: float
    blend_window: float


def _plan_total(w_target, w_join, target_costs, join_costs) -> float:
    return w_target * sum(target_costs) + w_join * sum(join_costs)


def select_units(db: list[AnimationUnit], request: SynthesisRequest) -> SynthesisPlan:
    """Minimum-cost unit sequence via dynamic programming over slots.

    Minimizes w_target * sum(target costs) + w_join * sum(join costs) over
    every candidate assignment; exact ties are broken by the
    lexicographically smallest source-index sequence, which makes the
    selection deterministic.
    """
    candidates: list[list[AnimationUnit]] = []
    for label, _ in request.items:
        cands = [u for u in db if u.label == label]
        if not cands:
            raise NoCandidate(label)
        cands.sort(key=lambda u: u.source_index)
        candidates.append(cands)

    wt, wj = request.w_target, request.w_join
    tcosts = [
        [target_cost(u, dur) for u in cands]
        for cands, (_, dur) in zip(candidates, request.items)
    ]

    # State per candidate: (target-cost list, join-cost list, index sequence).
    # Totals are recomputed from the lists with one fixed expression so the
    # comparison (and the reported plan total) is reproducible exactly.
    states = [
        ((tcosts[0][c],), (), (u.source_index,)) for c, u in enumerate(candidates[0])
    ]

    for i in range(1, len(candidates)):
        new_states = []
        for c, unit in enumerate(candidates[i]):
            best = None
            best_key = None
            for p, prev_unit in enumerate(candidates[i - 1]):
                st, sj, seq = states[p]
                cand = (
                    st + (tcosts[i][c],),
                    sj + (join_cost(prev_unit, unit, request.velocity_weight),),
                    seq + (unit.source_index,),
                )
                key = (_plan_total(wt, wj, cand[0], cand[1]), cand[2])
                if best_key is None or key < best_key:
                    best, best_key = cand, key
            new_states.append(best)
        states = new_states

    final = min(
        range(len(states)),
        key=lambda c: (_plan_total(wt, wj, states[c][0], states[c][1]), states[c][2]),
    )
    tlist, jlist, seq = states[final]

    by_index = {u.source_index: u for cands in candidates for u in cands}
    units = tuple(by_index[s] for s in seq)
    requested = tuple(d for _, d in request.items)
    warps = tuple(d / u.duration for u, d in zip(units, requested))
    return SynthesisPlan(
        units=units,
        warp_factors=warps,
        requested=requested,
        target_costs=tlist,
        join_costs=jlist,
        total=_plan_total(wt, wj, tlist, jlist),
        blend_window=request.blend_window,
    )


def render_plan(plan: SynthesisPlan, clip: AnimationClip) -> AnimationClip:
    """Concatenate the planned units into a new clip.

    Each unit's keys are linearly time-warped by its warp factor; at every
    junction the two neighbors are cross-faded over
    min(blend window, half of either unit's output duration), with linear
    interpolation of positions/stretch and spherical interpolation of
    rotations. Keys that fall outside a unit's span evaluate to its held
    boundary pose.
    """
    n_units = len(plan.units)
    offs = [0.0]
    for d in plan.requested:
        offs.append(offs[-1] + d)

    fades = []
    for j in range(n_units - 1):
        w = min(plan.blend_window, plan.requested[j] / 2.0, plan.requested[j + 1] / 2.0)
        fades.append(w)

    # Output rows: (time, owning unit, exact source time when on a native key).
    rows: list[tuple[float, int, float]] = []
    for i, (unit, warp) in enumerate(zip(plan.units, plan.warp_factors)):
        inner = np.flatnonzero((clip.times > unit.start) & (clip.times < unit.end))
        rows.append((offs[i], i, unit.start))
        for k in inner:
            t_out = offs[i] + (clip.times[k] - unit.start) * warp
            if offs[i] < t_out < offs[i + 1]:
                rows.append((float(t_out), i, float(clip.times[k])))
        rows.append((offs[i + 1], i, unit.end))

    rows.sort(key=lambda r: r[0])
    dedup: list[tuple[float, int, float]] = []
    for r in rows:
        if dedup and r[0] <= dedup[-1][0]:
            continue
        dedup.append(r)

    def eval_unit(i: int, t_out: float, tau: float | None = None):
        unit, warp = plan.units[i], plan.warp_factors[i]
        if tau is None:
            tau = unit.start + (t_out - offs[i]) / warp
            tau = min(max(tau, unit.start), unit.end)
        return clip.sample(tau)

    n = len(dedup)
    B = len(clip.bone_names)
    times = np.empty(n)
    quats = np.empty((n, B, 4))
    heads = np.empty((n, B, 3))
    stretches = np.empty((n, B))
    tails = np.empty((n, B, 3))
    jaw_q = np.empty((n, 4))
    jaw_t = np.empty((n, 3))

    for r, (t_out, i, tau) in enumerate(dedup):
        junction = None
        if i > 0 and fades[i - 1] > 0 and t_out <= offs[i] + fades[i - 1] / 2.0:
            junction = i - 1
        elif i < n_units - 1 and fades[i] > 0 and t_out >= offs[i + 1] - fades[i] / 2.0:
            junction = i

        if junction is None:
            vals = eval_unit(i, t_out, tau)
        else:
            w = fades[junction]
            a = float(np.clip((t_out - (offs[junction + 1] - w / 2.0)) / w, 0.0, 1.0))
            left = eval_unit(junction, t_out, tau if i == junction else None)
            right = eval_unit(junction + 1, t_out, tau if i == junction + 1 else None)
            vals = (
                slerp(left[0], right[0], a),
                (1 - a) * left[1] + a * right[1],
                (1 - a) * left[2] + a * right[2],
                (1 - a) * left[3] + a * right[3],
                slerp(left[4], right[4], a),
                (1 - a) * left[5] + a * right[5],
            )
        times[r] = t_out
        quats[r], heads[r], stretches[r], tails[r], jaw_q[r], jaw_t[r] = vals

    return AnimationClip(
        rate_hz=clip.rate_hz,
        bone_names=clip.bone_names,
        times=times,
        quats=quats,
        heads=heads,
        stretches=stretches,
        tails=tails,
        jaw_quats=jaw_q,
        jaw_translations=jaw_t,
        duration=offs[-1],
    )
