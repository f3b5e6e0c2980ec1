"""Event engine of the immunity waning model.

Entities carry four state components: an infection activity flag, a
detection state (never reverts once detected), a vaccination shot count
and one immunity flag per observable. External events (infections per
variant, vaccination shots) are generated from the input series and
distributed to randomly drawn eligible entities; they trigger dynamic
events (detection, recovery, vaccination effect, start/end of immunity)
through a day-resolved queue.

Processing order within one day is fixed for reproducibility: external
events first (detected infections, then undetected, then shots 1..3,
variants in configuration order), then dynamic events ordered by entity
id and scheduling order. A run is a pure function of (config, seed).

Reported tests in the first days imply infections before the simulation
window; those events are generated and processed on negative warm-up
days so no input case is silently dropped, while all outputs cover the
configured window only.
"""

from __future__ import annotations

import datetime as dt
import heapq
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..series import DailySeries, stochastic_round
from .config import IwmConfig, sample_waning_factor

log = logging.getLogger(__name__)

# dynamic event kinds
_DETECTION = 0
_RECOVERY = 1
_VACC_EFFECT = 2
_START_IMMUNITY = 3
_END_IMMUNITY = 4

# detection states
_NULL, _UNDETECTED, _DETECTED = 0, 1, 2

#: uniform redraws before falling back to an exact eligibility scan
_REJECTION_TRIES = 40

EXTERNAL_KINDS = ("detected", "undetected", "shot1", "shot2", "shot3")


class _RandomSet:
    """Set with O(1) add/discard and uniform random sampling."""

    __slots__ = ("items", "pos")

    def __init__(self, items=()):
        self.items = list(items)
        self.pos = {x: i for i, x in enumerate(self.items)}

    def __len__(self):
        return len(self.items)

    def __contains__(self, x):
        return x in self.pos

    def add(self, x):
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def discard(self, x):
        i = self.pos.pop(x, None)
        if i is None:
            return
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def sample(self, rng: np.random.Generator):
        return self.items[int(rng.integers(len(self.items)))]


@dataclass(frozen=True)
class ExternalEvents:
    """Daily external event multiset, indexed from a possibly negative first day."""

    first_day: int
    #: per day: list of (variant, reported test day) for detected infections
    detected: list
    #: per day: list of variant ids for undetected infections
    undetected: list
    #: per day: (first, second, third) shot counts
    shots: list

    def day_index(self, day: int) -> int:
        return day - self.first_day

    def total_detected(self) -> int:
        return sum(len(d) for d in self.detected)

    def total_undetected(self) -> int:
        return sum(len(d) for d in self.undetected)


def generate_external_events(config: IwmConfig, rng) -> ExternalEvents:
    """Turn the input series into daily infection and vaccination events.

    Infection events are placed on the day of infection: mass of the
    infection-to-test delay distribution shifts each reported test
    backwards in time, the resulting expected count per day is rounded
    stochastically (so totals match the case series in expectation) and
    every detected event keeps its reported test day. Undetected events
    are generated analogously, scaled by the undetected factor.
    Vaccination counts are taken from their series as-is.
    """
    rng = np.random.default_rng(rng)
    horizon = config.horizon
    max_lag = config.delay_detect.max_lag
    first_day = -max_lag
    n_days = horizon + max_lag
    detected: list[list] = [[] for _ in range(n_days)]
    undetected: list[list] = [[] for _ in range(n_days)]

    mass = config.delay_detect.mass
    undetected_scale = config.undetected_per_expected()
    for variant in config.variants:
        reported = config.variant_cases(variant)
        expected = np.zeros(n_days)
        for lag, m in enumerate(mass):
            if m == 0.0:
                continue
            lo = max_lag - lag
            expected[lo:lo + horizon] += m * reported
        det_counts = stochastic_round(expected, rng)
        undet_counts = stochastic_round(expected * undetected_scale, rng)
        for i in range(n_days):
            count = int(det_counts[i])
            if count:
                day = i + first_day
                weights = np.array([m * (reported[day + lag] if 0 <= day + lag < horizon else 0.0)
                                    for lag, m in enumerate(mass)])
                total = weights.sum()
                assert total > 0.0      # count > 0 implies contributing mass
                lags = rng.choice(len(mass), size=count, p=weights / total)
                detected[i].extend((variant, day + int(lag)) for lag in lags)
            u_count = int(undet_counts[i])
            if u_count:
                undetected[i].extend([variant] * u_count)

    shots = []
    for i in range(n_days):
        day = i + first_day
        if day < 0:
            shots.append((0, 0, 0))
        else:
            shots.append(tuple(
                0 if series is None else int(round(series.values[day]))
                for series in config.vaccinations))
    return ExternalEvents(first_day=first_day, detected=detected,
                          undetected=undetected, shots=shots)


@dataclass
class ImmunityTimelines:
    """Daily immune counts per observable plus the full state census.

    ``census[t, x1, x2, x3]`` counts entities on day ``t`` with activity
    flag ``x1`` (0 inactive, 1 active), detection state ``x2`` (0 none,
    1 undetected, 2 detected) and ``x3`` vaccination shots; it sums to
    the population size on every day.
    """

    start_date: dt.date
    n_entities: int
    observables: tuple[str, ...]
    immune_counts: dict            # observable -> np.ndarray of shape (horizon,)
    census: np.ndarray             # shape (horizon, 2, 3, 4)
    skipped_events: dict           # external kind -> dropped for lack of eligible entities
    attempted_events: dict         # external kind -> generated count
    trace: list | None = None

    def immune_fraction(self, observable: str) -> DailySeries:
        return DailySeries(self.start_date,
                           self.immune_counts[observable] / self.n_entities)


def run_iwm(config: IwmConfig, rng, collect_trace: bool = False) -> ImmunityTimelines:
    """Run the microsimulation and report daily immunity and census counts."""
    rng = np.random.default_rng(rng)
    events = generate_external_events(config, rng)
    return _run_events(config, events, rng, collect_trace)


def _run_events(config: IwmConfig, events: ExternalEvents, rng,
                collect_trace: bool) -> ImmunityTimelines:
    n = config.n_entities
    horizon = config.horizon
    observables = tuple(config.observables)

    active = np.zeros(n, dtype=bool)
    detect_state = np.zeros(n, dtype=np.int8)
    shots = np.zeros(n, dtype=np.int8)
    last_shot_day = np.full(n, np.iinfo(np.int64).min // 2, dtype=np.int64)
    immune = {obs: np.zeros(n, dtype=bool) for obs in observables}

    # per variant: entities that are inactive and not immune against
    # infection with that variant
    infect_eligible = {v: _RandomSet(range(n)) for v in config.variants}
    variants_by_target: dict[str, list[str]] = {}
    for variant in config.variants:
        variants_by_target.setdefault(config.infection_targets[variant], []).append(variant)
    shot_pools = [_RandomSet(range(n)), _RandomSet(), _RandomSet()]  # by current shot count
    min_gaps = (0, config.min_gap_12, config.min_gap_23)

    heap: list = []
    seq = 0
    cancelled: set[int] = set()
    # observable index -> per-entity (day, seq) of the single valid end event
    pending_end_day = {obs: np.full(n, -1, dtype=np.int64) for obs in observables}
    pending_end_seq = {obs: np.full(n, -1, dtype=np.int64) for obs in observables}

    immune_counts = {obs: np.zeros(horizon, dtype=np.int64) for obs in observables}
    census = np.zeros((horizon, 2, 3, 4), dtype=np.int64)
    skipped = dict.fromkeys(EXTERNAL_KINDS, 0)
    attempted = dict.fromkeys(EXTERNAL_KINDS, 0)
    trace: list | None = [] if collect_trace else None

    def push(day, entity, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (day, entity, seq, kind, payload))
        seq += 1
        return seq - 1

    def refresh_infection_eligibility(entity, targets):
        for obs in targets:
            for variant in variants_by_target.get(obs, ()):
                if not active[entity] and not immune[obs][entity]:
                    infect_eligible[variant].add(entity)
                else:
                    infect_eligible[variant].discard(entity)

    def schedule_end(entity, obs, day):
        # keep only the later of two queued end events per (entity, observable)
        old_day = pending_end_day[obs][entity]
        if old_day >= 0:
            if day <= old_day:
                return      # the new event is the earlier one: cancelled on arrival
            cancelled.add(int(pending_end_seq[obs][entity]))
        pending_end_day[obs][entity] = day
        pending_end_seq[obs][entity] = push(day, entity, _END_IMMUNITY, obs)

    def grant_immunity(entity, source, day):
        threshold = 1.0 - rng.random()      # uniform on (0, 1]
        granted = [obs for obs in observables
                   if config.base_prob(source, obs) >= threshold]
        if not granted:
            return
        factor = sample_waning_factor(config.waning_families[source], rng)
        for obs in granted:
            if not immune[obs][entity]:
                push(day, entity, _START_IMMUNITY, obs)
            end_day = day + max(0, int(round(factor * config.waning_mean(source, obs))))
            schedule_end(entity, obs, end_day)

    def infect(entity, variant, day, detected_day=None):
        active[entity] = True
        if detect_state[entity] == _NULL:
            detect_state[entity] = _UNDETECTED
        refresh_infection_eligibility(entity, observables)  # active now blocks all variants
        if detected_day is not None:
            push(detected_day, entity, _DETECTION, None)
            lag = int(config.delay_recover_detected.sample(rng))
        else:
            lag = int(config.delay_recover_undetected.sample(rng))
        push(day + lag, entity, _RECOVERY, variant)

    def draw_shot_candidate(level, day):
        pool = shot_pools[level]
        if len(pool) == 0:
            return None
        gap = min_gaps[level]
        if gap <= 0:
            return pool.sample(rng)
        for _ in range(_REJECTION_TRIES):
            entity = pool.sample(rng)
            if day - last_shot_day[entity] >= gap:
                return entity
        ready = [e for e in pool.items if day - last_shot_day[e] >= gap]
        if not ready:
            return None
        return ready[int(rng.integers(len(ready)))]

    for day in range(events.first_day, horizon):
        i = events.day_index(day)

        for variant, test_day in events.detected[i]:
            attempted["detected"] += 1
            pool = infect_eligible[variant]
            if len(pool) == 0:
                skipped["detected"] += 1
                continue
            entity = pool.sample(rng)
            infect(entity, variant, day, detected_day=test_day)
            if trace is not None:
                trace.append(("detected_infection", day, entity, variant, test_day))
        for variant in events.undetected[i]:
            attempted["undetected"] += 1
            pool = infect_eligible[variant]
            if len(pool) == 0:
                skipped["undetected"] += 1
                continue
            entity = pool.sample(rng)
            infect(entity, variant, day)
            if trace is not None:
                trace.append(("undetected_infection", day, entity, variant))
        for level, count in enumerate(events.shots[i]):
            kind = f"shot{level + 1}"
            for _ in range(count):
                attempted[kind] += 1
                entity = draw_shot_candidate(level, day)
                if entity is None:
                    skipped[kind] += 1
                    continue
                shot_pools[level].discard(entity)
                if level + 1 < len(shot_pools):
                    shot_pools[level + 1].add(entity)
                shots[entity] = level + 1
                last_shot_day[entity] = day
                push(day + config.effect_delays[level], entity, _VACC_EFFECT, level + 1)
                if trace is not None:
                    trace.append(("vaccination", day, entity, level + 1))

        while heap and heap[0][0] == day:
            _, entity, event_seq, kind, payload = heapq.heappop(heap)
            if kind == _END_IMMUNITY and event_seq in cancelled:
                cancelled.discard(event_seq)
                continue
            if kind == _DETECTION:
                detect_state[entity] = _DETECTED
                if trace is not None:
                    trace.append(("detection", day, entity))
            elif kind == _RECOVERY:
                active[entity] = False
                refresh_infection_eligibility(entity, observables)
                grant_immunity(entity, payload, day)
                if trace is not None:
                    trace.append(("recovery", day, entity, payload))
            elif kind == _VACC_EFFECT:
                grant_immunity(entity, f"v{payload}", day)
                if trace is not None:
                    trace.append(("vaccination_effect", day, entity, payload))
            elif kind == _START_IMMUNITY:
                immune[payload][entity] = True
                refresh_infection_eligibility(entity, (payload,))
                if trace is not None:
                    trace.append(("start_immunity", day, entity, payload))
            else:  # _END_IMMUNITY
                pending_end_day[payload][entity] = -1
                pending_end_seq[payload][entity] = -1
                immune[payload][entity] = False
                refresh_infection_eligibility(entity, (payload,))
                if trace is not None:
                    trace.append(("end_immunity", day, entity, payload))

        if day >= 0:
            for obs in observables:
                immune_counts[obs][day] = int(np.count_nonzero(immune[obs]))
            combo = (active.astype(np.int64) * 12
                     + detect_state.astype(np.int64) * 4
                     + shots.astype(np.int64))
            census[day] = np.bincount(combo, minlength=24).reshape(2, 3, 4)

    total_attempted = sum(attempted.values())
    total_skipped = sum(skipped.values())
    if total_attempted and total_skipped / total_attempted > 0.01:
        log.warning("dropped %d of %d external events for lack of eligible entities",
                    total_skipped, total_attempted)

    return ImmunityTimelines(
        start_date=config.start_date, n_entities=config.n_entities,
        observables=observables, immune_counts=immune_counts, census=census,
        skipped_events=skipped, attempted_events=attempted, trace=trace)


def protection_curves(timelines: ImmunityTimelines, infection_target: str,
                      severe_target: str) -> tuple[DailySeries, DailySeries]:
    """Daily protection levels against infection and severe disease.

    Both curves are immune-count fractions of the population, in [0,1].
    """
    for target in (infection_target, severe_target):
        if target not in timelines.immune_counts:
            raise InputError(f"unknown observable {target!r}; run tracked "
                             f"{sorted(timelines.immune_counts)}")
    return (timelines.immune_fraction(infection_target),
            timelines.immune_fraction(severe_target))
