"""User mobility: trace ingestion, synthetic traces, AP attachment and handovers."""

from __future__ import annotations

import bisect
import csv
import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .topology import Topology


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class UserSpec:
    user_id: str
    app_id: str
    request_period: float = 40.0

    def __post_init__(self):
        if self.request_period <= 0:
            raise ValueError(f"user {self.user_id}: request period must be positive")


@dataclass(frozen=True)
class Sample:
    time: float
    x_m: Optional[float] = None
    y_m: Optional[float] = None
    ap_id: Optional[str] = None


@dataclass(frozen=True)
class Handover:
    time: float
    user_id: str
    from_ap: str
    to_ap: str


@dataclass
class MobilitySchedule:
    samples: dict[str, list[Sample]] = field(default_factory=dict)

    @property
    def users(self) -> list[str]:
        return sorted(self.samples)

    def attachments(self, topo: Topology) -> dict[str, list[tuple[float, str]]]:
        """Per user, the time-ordered (time, ap) attachments implied by the samples."""
        aps = _ap_table(topo)
        out = {}
        for user, samples in self.samples.items():
            seq = []
            for s in samples:
                if s.ap_id is not None:
                    if s.ap_id not in topo.nodes:
                        raise TraceError(f"user {user}: unknown AP {s.ap_id!r} at time {s.time}")
                    seq.append((s.time, s.ap_id))
                else:
                    seq.append((s.time, _nearest(aps, s.x_m, s.y_m)))
            out[user] = seq
        return out

    def handovers(self, topo: Topology) -> list[Handover]:
        events = []
        for user, seq in self.attachments(topo).items():
            for (_, prev), (t, cur) in zip(seq, seq[1:]):
                if cur != prev:
                    events.append(Handover(t, user, prev, cur))
        events.sort(key=lambda h: (h.time, h.user_id))
        return events


def _ap_table(topo: Topology) -> list[tuple[str, float, float]]:
    aps = [(ap.node_id, ap.position[0], ap.position[1]) for ap in topo.aps()]
    if not aps:
        raise TraceError("topology has no positioned APs")
    return aps


def _nearest(aps: Sequence[tuple[str, float, float]], x: float, y: float) -> str:
    return min(aps, key=lambda a: (math.hypot(a[1] - x, a[2] - y), a[0]))[0]


def nearest_ap(position: tuple[float, float], topo: Topology) -> str:
    return _nearest(_ap_table(topo), *position)


def gen_grid_aps(area_m: tuple[float, float], spacing_m: float) -> list[tuple[float, float]]:
    """Row-major grid of AP positions at cell centres."""
    w, h = area_m
    if spacing_m <= 0:
        raise ValueError("spacing must be positive")
    nx, ny = int(w // spacing_m), int(h // spacing_m)
    if nx < 1 or ny < 1:
        raise ValueError(f"area {w}x{h} holds no {spacing_m} m cell")
    return [((c + 0.5) * spacing_m, (r + 0.5) * spacing_m) for r in range(ny) for c in range(nx)]


def load_trace(path: str | Path, known_users: Optional[Iterable[str]] = None) -> MobilitySchedule:
    """Read ``time,user_id,x_m,y_m`` or ``time,user_id,ap_id`` CSV."""
    known = set(known_users) if known_users is not None else None
    schedule = MobilitySchedule()
    last_line: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if {"time", "user_id"} - cols:
            raise TraceError(f"{path}: missing columns {sorted({'time', 'user_id'} - cols)}")
        positional = {"x_m", "y_m"} <= cols
        if not positional and "ap_id" not in cols:
            raise TraceError(f"{path}: need x_m,y_m or ap_id columns")
        for lineno, row in enumerate(reader, start=2):
            user = (row["user_id"] or "").strip()
            try:
                t = float(row["time"])
                if positional:
                    sample = Sample(t, float(row["x_m"]), float(row["y_m"]))
                else:
                    ap = (row["ap_id"] or "").strip()
                    if not ap:
                        raise ValueError("empty ap_id")
                    sample = Sample(t, ap_id=ap)
            except (TypeError, ValueError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not user:
                raise TraceError(f"{path}:{lineno}: empty user_id")
            if known is not None and user not in known:
                raise TraceError(f"{path}:{lineno}: unknown user id {user!r}")
            samples = schedule.samples.setdefault(user, [])
            if samples and t < samples[-1].time:
                raise TraceError(
                    f"{path}:{lineno}: time {t} for user {user} precedes line {last_line[user]} (time {samples[-1].time})"
                )
            samples.append(sample)
            last_line[user] = lineno
    return schedule


def trace_csv(schedule: MobilitySchedule) -> str:
    rows = sorted(
        ((s.time, user, s) for user, samples in schedule.samples.items() for s in samples),
        key=lambda r: (r[0], r[1]),
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    positional = all(s.ap_id is None for _, _, s in rows)
    w.writerow(["time", "user_id", "x_m", "y_m"] if positional else ["time", "user_id", "ap_id"])
    for t, user, s in rows:
        w.writerow([_num(t), user, _num(s.x_m), _num(s.y_m)] if positional else [_num(t), user, s.ap_id])
    return buf.getvalue()


def write_trace(schedule: MobilitySchedule, path: str | Path) -> None:
    Path(path).write_text(trace_csv(schedule), encoding="utf-8")


def _num(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(round(v, 3))


def gen_synthetic_trace(
    seed: int,
    users: Sequence[str] | int,
    area: tuple[float, float],
    epochs: int,
    move_prob: float,
    epoch_length: float = 2000.0,
) -> MobilitySchedule:
    """Random-waypoint trace: one sample per user per epoch.

    At every epoch after the first, each user independently jumps to a fresh
    uniform waypoint with probability ``move_prob``; otherwise it stays put.
    """
    if not 0.0 <= move_prob <= 1.0:
        raise ValueError("move_prob must lie in [0, 1]")
    if isinstance(users, int):
        users = [f"u{i:02d}" for i in range(users)]
    rng = random.Random(seed)
    w, h = area
    schedule = MobilitySchedule({u: [] for u in users})
    pos = {u: (round(rng.uniform(0, w), 1), round(rng.uniform(0, h), 1)) for u in users}
    for e in range(epochs):
        for u in users:
            if e > 0 and rng.random() < move_prob:
                pos[u] = (round(rng.uniform(0, w), 1), round(rng.uniform(0, h), 1))
            schedule.samples[u].append(Sample(e * epoch_length, *pos[u]))
    return schedule


def handovers_between(events: Sequence[Handover], t0: float, t1: float) -> int:
    """Number of handovers with t0 < time <= t1; ``events`` must be time-sorted."""
    if t0 > t1:
        raise ValueError("t0 must not exceed t1")
    times = [h.time for h in events]
    return bisect.bisect_right(times, t1) - bisect.bisect_right(times, t0)
