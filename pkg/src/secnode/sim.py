"""Deterministic discrete-event simulator for the cluster.

A workload is a graph of :class:`Phase` objects. :func:`schedule` list-
schedules it on three resources (the cluster compute slot, the cluster DMA
and the quad-SPI link to external memory), inserting operating-mode
switches as needed; :func:`run` integrates time and energy per category.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import __version__
from .errors import (
    CapacityExceeded,
    CyclicDependency,
    PeriodTooShort,
    TileInfeasible,
    UnknownMemory,
)
from .perf import OperatingMode, OperatingPoint, PerfModel, cores, default_model

CATEGORIES = ("CONV", "AES_KEC", "DENSE", "DMA_OTHER", "FRAM", "FLASH", "SPI_IO")


class PhaseKind(str, Enum):
    HWCRYPT = "HWCRYPT"
    HWCE = "HWCE"
    SW = "SW"
    DMA = "DMA"
    EXTMEM = "EXTMEM"
    MODE_SWITCH = "MODE_SWITCH"
    SLEEP = "SLEEP"


CLUSTER_KINDS = (PhaseKind.HWCRYPT, PhaseKind.HWCE, PhaseKind.SW, PhaseKind.MODE_SWITCH, PhaseKind.SLEEP)
RESOURCE = {PhaseKind.DMA: "dma", PhaseKind.EXTMEM: "spi"}


@dataclass(frozen=True)
class ExtMemModel:
    kind: str  # "flash" or "fram"
    standby_ma: float  # per bank
    active_ma: float  # per active bank
    volts: float
    bandwidth: float  # bytes/s
    banks: int = 1
    active_banks: int = 1

    def __post_init__(self):
        if not self.active_ma >= self.standby_ma >= 0:
            raise ValueError("need active >= standby >= 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def standby_mw(self) -> float:
        return self.standby_ma * self.banks * self.volts

    def active_mw(self) -> float:
        return self.active_ma * self.active_banks * self.volts


@dataclass
class PlatformConfig:
    tcdm_bytes: int = 65536
    l2_bytes: int = 196608
    tcdm_banks: int = 8
    accel_ports: int = 4
    dma_outstanding: int = 16
    dma_burst_bytes: int = 256
    hwcrypt_queue_depth: int = 4
    hwce_queue_depth: int = 2
    sector_size: int = 4096
    model: PerfModel = field(default_factory=default_model, repr=False)
    memories: Dict[str, ExtMemModel] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tcdm_bytes", "l2_bytes", "tcdm_banks", "accel_ports", "dma_outstanding",
                     "dma_burst_bytes", "hwcrypt_queue_depth", "hwce_queue_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.memories:
            self.memories = {
                k: ExtMemModel(kind=k, **v) for k, v in self.model.pw["extmem"].items()
            }

    def memory(self, kind: str) -> ExtMemModel:
        try:
            return self.memories[kind]
        except KeyError:
            raise UnknownMemory(f"unknown external memory {kind!r}") from None


@dataclass(frozen=True)
class Phase:
    id: str
    kind: PhaseKind
    payload: Mapping[str, Any] = field(default_factory=dict)
    category: str = "DMA_OTHER"
    deps: Tuple[str, ...] = ()
    overlappable: bool = False
    modes: Optional[Tuple[OperatingMode, ...]] = None  # allowed modes; None means "by kind"
    pinned_mode: Optional[OperatingMode] = None
    repeat: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", PhaseKind(self.kind))
        object.__setattr__(self, "deps", tuple(self.deps))
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")


def allowed_modes(phase: Phase) -> Tuple[OperatingMode, ...]:
    if phase.modes is not None:
        return tuple(OperatingMode(m) for m in phase.modes)
    if phase.kind == PhaseKind.HWCRYPT:
        if str(phase.payload.get("op", "XTS")).upper() in ("ECB", "XTS"):
            return (OperatingMode.CRY_CNN_SW,)
        return (OperatingMode.CRY_CNN_SW, OperatingMode.KEC_CNN_SW)
    if phase.kind == PhaseKind.HWCE:
        return (OperatingMode.CRY_CNN_SW, OperatingMode.KEC_CNN_SW)
    return tuple(OperatingMode)


# -- tiling -----------------------------------------------------------------

@dataclass(frozen=True)
class LayerGeometry:
    out_w: int
    out_h: int
    in_ch: int
    out_ch: int
    fs: int
    pixel_bytes: int = 2


@dataclass(frozen=True)
class Tile:
    x0: int
    y0: int
    w: int
    h: int
    oc0: int
    oc_n: int


def tile_working_set(g: LayerGeometry, precision: int, t_w: int, t_h: int, oc_n: int) -> int:
    """TCDM bytes for one double-buffered tile: 2 x (input + output) + weights."""
    in_tile = (t_w + g.fs - 1) * (t_h + g.fs - 1) * g.in_ch * g.pixel_bytes
    out_tile = t_w * t_h * oc_n * g.pixel_bytes
    weights = math.ceil(oc_n * g.in_ch * g.fs * g.fs * precision / 8)
    return 2 * (in_tile + out_tile) + weights


def tile_plan(g: LayerGeometry, precision: int, tcdm_budget: int) -> List[Tile]:
    """Cover the output with the largest square tiles (then channel groups) that fit."""
    best = None
    groups = [d for d in range(g.out_ch, 0, -1) if g.out_ch % d == 0]
    for oc_n in groups:
        for t in range(min(g.out_w, g.out_h), 0, -1):
            if tile_working_set(g, precision, t, t, oc_n) <= tcdm_budget:
                key = (t * t * oc_n, t)
                if best is None or key > best[0]:
                    best = (key, t, oc_n)
                break
    if best is None:
        raise TileInfeasible(f"no tile of {g} fits {tcdm_budget} B at {precision} bit")
    _, t, oc_n = best
    tiles = []
    for oc0 in range(0, g.out_ch, oc_n):
        for y0 in range(0, g.out_h, t):
            for x0 in range(0, g.out_w, t):
                tiles.append(Tile(x0, y0, min(t, g.out_w - x0), min(t, g.out_h - y0), oc0, oc_n))
    return tiles


# -- scheduling -------------------------------------------------------------

@dataclass
class Event:
    id: str
    kind: PhaseKind
    category: str
    start: float
    end: float
    mode: Optional[OperatingMode]
    freq: float
    cycles: float
    resource: str
    stall_s: float = 0.0
    nbytes: int = 0
    memory: Optional[str] = None
    units: Tuple[str, ...] = ()
    payload: Mapping[str, Any] = field(default_factory=dict)
    overlappable: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Timeline:
    events: List[Event]
    vdd: float
    makespan: float
    mode_switches: int


def _toposort(phases: Sequence[Phase]) -> List[Phase]:
    by_id = {}
    for p in phases:
        if p.id in by_id:
            raise ValueError(f"duplicate phase id {p.id!r}")
        by_id[p.id] = p
    indeg = {p.id: 0 for p in phases}
    users: Dict[str, List[str]] = {p.id: [] for p in phases}
    for p in phases:
        for d in p.deps:
            if d not in by_id:
                raise ValueError(f"phase {p.id!r} depends on unknown {d!r}")
            indeg[p.id] += 1
            users[d].append(p.id)
    order_idx = {p.id: i for i, p in enumerate(phases)}
    ready = sorted((pid for pid, n in indeg.items() if n == 0), key=order_idx.get)
    out = []
    while ready:
        pid = ready.pop(0)
        out.append(by_id[pid])
        for u in users[pid]:
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
        ready.sort(key=order_idx.get)
    if len(out) != len(phases):
        stuck = sorted(pid for pid, n in indeg.items() if n)
        raise CyclicDependency(f"dependency cycle among {stuck}")
    return out


def _work(phase: Phase, model: PerfModel) -> Tuple[float, Tuple[str, ...], int]:
    """(cycles per repeat, active units, bytes) for a cluster-clocked phase."""
    p = phase.payload
    k = phase.kind
    if k == PhaseKind.HWCRYPT:
        op = str(p.get("op", "XTS")).upper()
        jobs = int(p.get("jobs", 1))
        nbytes = int(p["nbytes"])
        per_job = nbytes / jobs
        cyc = jobs * model.cycles_hwcrypt(op, per_job, p.get("rate_bits", 128), p.get("rounds", 20))
        unit = "hwcrypt_kec" if op == "SPONGE_AE" else "hwcrypt_aes"
        return cyc, (unit,), nbytes
    if k == PhaseKind.HWCE:
        jobs = int(p.get("jobs", 1))
        n_maps = {16: 1, 8: 2, 4: 4}[int(p["precision"])]
        cyc = jobs * model.cycles_hwce(p["out_w"], p["out_h"], p["fs"], p["precision"], n_maps=n_maps)
        return cyc, ("hwce",), 0
    if k == PhaseKind.SW:
        n = int(p.get("cores", 1))
        cyc = model.cycles_sw(p["kernel"], p["units"], n, bool(p.get("simd", False)))
        return cyc, tuple(sorted(cores(n))), int(p.get("nbytes", 0))
    if k == PhaseKind.DMA:
        return model.cycles_dma(int(p["nbytes"]), int(p.get("transfers", 1))), ("dma",), int(p["nbytes"])
    raise ValueError(f"no cycle model for {k}")


def _queue_stall(jobs: int, depth: int, job_seconds: float) -> float:
    """Issuer wait time when pushing ``jobs`` equal jobs into a queue of ``depth``."""
    return max(0, jobs - depth) * job_seconds


def schedule(phases: Sequence[Phase], platform: Optional[PlatformConfig] = None, vdd: float = 0.8,
             mode_policy: Optional[Iterable[OperatingMode]] = None,
             initial_mode: Optional[OperatingMode] = None) -> Timeline:
    """List-schedule the phase graph; returns a timeline of events.

    ``mode_policy`` restricts which operating modes may be used; among the
    modes a phase allows, the fastest one is chosen (greedy).
    """
    platform = platform or PlatformConfig()
    model = platform.model
    policy = tuple(OperatingMode(m) for m in (mode_policy or (OperatingMode.CRY_CNN_SW, OperatingMode.KEC_CNN_SW)))
    order = _toposort(phases)
    free = {"cluster": 0.0, "dma": 0.0, "spi": 0.0}
    finish: Dict[str, float] = {}
    events: List[Event] = []
    cur_mode = OperatingMode(initial_mode) if initial_mode else None
    switches = 0

    for ph in order:
        if int(ph.payload.get("tcdm_bytes", 0)) > platform.tcdm_bytes:
            raise CapacityExceeded(f"phase {ph.id} needs {ph.payload['tcdm_bytes']} B of TCDM")
        if int(ph.payload.get("l2_bytes", 0)) > platform.l2_bytes:
            raise CapacityExceeded(f"phase {ph.id} needs {ph.payload['l2_bytes']} B of L2")
        ready = max((finish[d] for d in ph.deps), default=0.0)

        if ph.kind in CLUSTER_KINDS:
            if ph.pinned_mode is not None:
                mode = OperatingMode(ph.pinned_mode)
            else:
                options = [m for m in allowed_modes(ph) if m in policy]
                if not options:
                    raise ValueError(f"phase {ph.id} cannot run under mode policy {policy}")
                if cur_mode in options and len(options) == 1:
                    mode = cur_mode
                else:
                    mode = max(options, key=lambda m: (model.frequency_of(m, vdd), m.value))
            start = max(ready, free["cluster"])
            if cur_mode is not None and mode != cur_mode and ph.kind != PhaseKind.SLEEP:
                dt = model.mode_switch_cost(cur_mode, mode)
                events.append(Event(f"switch:{cur_mode.value}->{mode.value}@{ph.id}", PhaseKind.MODE_SWITCH,
                                    "DMA_OTHER", start, start + dt, mode, model.frequency_of(mode, vdd), 0.0,
                                    "cluster"))
                switches += 1
                start += dt
            if ph.kind != PhaseKind.SLEEP:
                cur_mode = mode
            freq = model.frequency_of(mode, vdd)
            stall = 0.0
            if ph.kind == PhaseKind.SLEEP:
                cyc, units, nbytes = 0.0, (), 0
                dur = float(ph.payload["seconds"]) * ph.repeat
            else:
                cyc, units, nbytes = _work(ph, model)
                cyc *= ph.repeat
                nbytes *= ph.repeat
                dur = cyc / freq
                if ph.kind in (PhaseKind.HWCRYPT, PhaseKind.HWCE):
                    jobs = int(ph.payload.get("jobs", 1)) * ph.repeat
                    depth = platform.hwcrypt_queue_depth if ph.kind == PhaseKind.HWCRYPT else platform.hwce_queue_depth
                    stall = _queue_stall(jobs, depth, dur / jobs)
            end = start + dur
            free["cluster"] = end
            events.append(Event(ph.id, ph.kind, ph.category, start, end, mode, freq, cyc, "cluster", stall,
                                nbytes, None, units, dict(ph.payload)))
        else:
            res = RESOURCE[ph.kind]
            start = max(ready, free[res])
            if not ph.overlappable:
                start = max(start, free["cluster"])
            mode = cur_mode or policy[0]
            freq = model.frequency_of(mode, vdd)
            if ph.kind == PhaseKind.DMA:
                cyc, units, nbytes = _work(ph, model)
                cyc *= ph.repeat
                nbytes *= ph.repeat
                dur = cyc / freq
                mem = None
            else:
                nbytes = int(ph.payload["nbytes"]) * ph.repeat
                mem = ph.payload["memory"]
                dur = nbytes / platform.memory(mem).bandwidth
                cyc, units = 0.0, ()
            end = start + dur
            free[res] = end
            if not ph.overlappable:
                free["cluster"] = end
            events.append(Event(ph.id, ph.kind, ph.category, start, end, mode, freq, cyc, res, 0.0, nbytes,
                                mem, units, dict(ph.payload), ph.overlappable))
        finish[ph.id] = end

    makespan = max((e.end for e in events), default=0.0)
    return Timeline(events, vdd, makespan, switches)


# -- energy integration -----------------------------------------------------

@dataclass
class PhaseRow:
    id: str
    kind: str
    category: str
    mode: Optional[str]
    start_s: float
    end_s: float
    cycles: float
    power_mw: float
    energy_j: float
    stall_s: float = 0.0


@dataclass
class SimReport:
    total_cycles: float
    total_seconds: float
    total_joules: float
    categories: Dict[str, float]
    peak_power_mw: float
    mode_switches: int
    rows: List[PhaseRow]
    vdd: float
    equivalent_ops: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def pj_per_op(self) -> Optional[float]:
        if not self.equivalent_ops:
            return None
        return self.total_joules / self.equivalent_ops * 1e12

    @property
    def active_joules(self) -> float:
        """Energy excluding external-memory standby."""
        return self.total_joules - self.meta.get("standby_joules", 0.0)

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "total_cycles": self.total_cycles,
            "total_seconds": self.total_seconds,
            "total_joules": self.total_joules,
            "categories": dict(self.categories),
            "peak_power_mw": self.peak_power_mw,
            "mode_switches": self.mode_switches,
            "vdd": self.vdd,
            "equivalent_ops": self.equivalent_ops,
            "pj_per_op": self.pj_per_op,
            "meta": dict(self.meta),
            "phases": [asdict(r) for r in self.rows],
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        """Summary rows (metric,value) followed by the per-phase table."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        summary = self.to_dict()
        for k in ("total_cycles", "total_seconds", "total_joules", "peak_power_mw", "mode_switches", "vdd",
                  "equivalent_ops", "pj_per_op"):
            w.writerow([k, repr(summary[k])])
        for c in CATEGORIES:
            w.writerow([f"category.{c}", repr(self.categories[c])])
        for k in sorted(self.meta):
            w.writerow([f"meta.{k}", repr(self.meta[k])])
        w.writerow([])
        cols = list(PhaseRow.__dataclass_fields__)
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c) for c in cols])
        return buf.getvalue()


def run(timeline: Timeline, platform: Optional[PlatformConfig] = None,
        equivalent_ops: Optional[float] = None) -> SimReport:
    """Integrate energy over a timeline; identical inputs give identical reports."""
    platform = platform or PlatformConfig()
    model = platform.model
    pw = model.pw
    vdd = timeline.vdd
    cat = {c: 0.0 for c in CATEGORIES}
    rows: List[PhaseRow] = []
    # (start, end, on-chip mW) for peak tracking
    spans: List[Tuple[float, float, float]] = []
    idle_mw = model.power_mw(OperatingPoint(OperatingMode.CRY_CNN_SW, vdd, 1.0), ())
    cluster_busy: List[Tuple[float, float]] = []
    total_cycles = 0.0
    spi_pj = pw["spi_io_pj_per_byte"]

    for e in timeline.events:
        point = OperatingPoint(e.mode, vdd, e.freq) if e.mode else None
        dur = e.duration
        if e.kind == PhaseKind.MODE_SWITCH:
            p_mw = idle_mw
            energy = p_mw * 1e-3 * dur
            cat["DMA_OTHER"] += energy
            cluster_busy.append((e.start, e.end))
        elif e.kind == PhaseKind.SLEEP:
            state = e.payload.get("state", "deep_sleep")
            p_mw = model.power_mw(point, (), sleep=state)
            energy = p_mw * 1e-3 * dur
            cat[e.category] += energy
            cluster_busy.append((e.start, e.end))
        elif e.resource == "cluster":
            p_mw = model.power_mw(point, e.units)
            energy = p_mw * 1e-3 * dur
            cat[e.category] += energy
            total_cycles += e.cycles
            cluster_busy.append((e.start, e.end))
            if e.stall_s:
                stall_e = pw["stall_core_mw"] * 1e-3 * e.stall_s
                cat["DMA_OTHER"] += stall_e
                energy += stall_e
        elif e.kind == PhaseKind.DMA:
            total_cycles += e.cycles
            if e.overlappable:
                # incremental power only; leakage is carried by the cluster timeline
                p_mw = model.power_mw(point, e.units) - model.leakage_mw(vdd) - model.soc_mw(vdd)
            else:
                p_mw = model.power_mw(point, e.units)
                cluster_busy.append((e.start, e.end))
            energy = p_mw * 1e-3 * dur
            cat[e.category] += energy
        else:  # EXTMEM
            mem = platform.memory(e.memory)
            mem_e = mem.active_mw() * 1e-3 * dur
            spi_e = spi_pj * 1e-12 * e.nbytes
            cat[e.category] += mem_e
            cat["SPI_IO"] += spi_e
            energy = mem_e + spi_e
            p_mw = spi_e / dur * 1e3 if dur else 0.0
        rows.append(PhaseRow(e.id, e.kind.value, e.category, e.mode.value if e.mode else None, e.start, e.end,
                             e.cycles, p_mw, energy, e.stall_s))
        # peak tracks the core supply only; memories and SPI pads sit on the I/O rail
        spans.append((e.start, e.end, 0.0 if e.kind == PhaseKind.EXTMEM else p_mw))

    makespan = timeline.makespan
    # cluster clock-gated whenever no cluster-side work runs
    busy = _merge(cluster_busy)
    idle_s = max(0.0, makespan - sum(b - a for a, b in busy))
    idle_e = idle_mw * 1e-3 * idle_s
    cat["DMA_OTHER"] += idle_e
    for a, b in _gaps(busy, makespan):
        spans.append((a, b, idle_mw))

    standby = 0.0
    for name, mem in sorted(platform.memories.items()):
        e_sb = mem.standby_mw() * 1e-3 * makespan
        standby += e_sb
        cat["FLASH" if name == "flash" else "FRAM"] += e_sb

    total = 0.0
    for c in CATEGORIES:
        total += cat[c]
    return SimReport(
        total_cycles=total_cycles,
        total_seconds=makespan,
        total_joules=total,
        categories=cat,
        peak_power_mw=_peak(spans),
        mode_switches=timeline.mode_switches,
        rows=rows,
        vdd=vdd,
        equivalent_ops=equivalent_ops,
        meta={
            "version": __version__,
            "calibration_hash": model.cal.hash,
            "idle_seconds": idle_s,
            "standby_joules": standby,
        },
    )


def _merge(iv: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    out: List[Tuple[float, float]] = []
    for a, b in sorted(iv):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _gaps(busy: List[Tuple[float, float]], end: float) -> List[Tuple[float, float]]:
    gaps = []
    t = 0.0
    for a, b in busy:
        if a > t:
            gaps.append((t, a))
        t = max(t, b)
    if end > t:
        gaps.append((t, end))
    return gaps


def _peak(spans: List[Tuple[float, float, float]]) -> float:
    pts = []
    for a, b, p in spans:
        if b > a:
            pts.append((a, 1, p))
            pts.append((b, 0, -p))
    pts.sort()
    cur = peak = 0.0
    for _, _, dp in pts:
        cur += dp
        peak = max(peak, cur)
    return peak


# -- external memories and duty cycling --------------------------------------

def ext_transfer(kind: str, nbytes: int, direction: str = "read",
                 platform: Optional[PlatformConfig] = None) -> Tuple[float, float]:
    """(seconds, joules) for moving ``nbytes`` to/from an external memory."""
    if nbytes < 0:
        raise ValueError("nbytes must be >= 0")
    if direction not in ("read", "write"):
        raise ValueError("direction must be 'read' or 'write'")
    platform = platform or PlatformConfig()
    mem = platform.memory(kind)
    t = nbytes / mem.bandwidth
    return t, mem.active_mw() * 1e-3 * t


@dataclass(frozen=True)
class DutyCycle:
    period_s: float
    active_s: float
    sleep_s: float
    energy_per_period: float
    total_energy: float
    iterations: int


def sleep_between(iterations: int, period: float, report: SimReport, platform: Optional[PlatformConfig] = None,
                  state: str = "deep_sleep") -> DutyCycle:
    """Energy of running ``report`` once per ``period`` and sleeping in between."""
    platform = platform or PlatformConfig()
    model = platform.model
    active = report.total_seconds
    if period < active:
        raise PeriodTooShort(f"period {period} s shorter than active time {active} s")
    sleep_s = period - active
    energy = report.total_joules
    if sleep_s > 0:
        point = OperatingPoint(OperatingMode.CRY_CNN_SW, report.vdd, 1.0)
        energy += model.power_mw(point, (), sleep=state) * 1e-3 * sleep_s
        energy += model.power_mw(point, (), sleep="idle") * 1e-3 * model.wakeup_seconds(state)
        for mem in platform.memories.values():
            energy += mem.standby_mw() * 1e-3 * sleep_s
    return DutyCycle(period, active, sleep_s, energy, energy * iterations, iterations)
