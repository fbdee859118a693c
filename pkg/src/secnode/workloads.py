"""Phase-graph builders for the three end-to-end use cases.

Each use case is described by a JSON file in ``secnode/usecases``; layer
schedules marked ``reconstructed`` are plausible reconstructions, not the
exact evaluated networks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from typing import Any, Dict, List, Optional, Tuple

from .errors import UnknownUseCase
from .perf import OperatingMode, PerfModel, default_model
from .sim import (
    LayerGeometry,
    Phase,
    PhaseKind,
    PlatformConfig,
    SimReport,
    run,
    schedule,
    sleep_between,
    tile_plan,
)

USE_CASES = ("UAV_RESNET20", "FACE_DETECT", "EEG_SEIZURE")
_FILES = {"UAV_RESNET20": "uav_resnet20.json", "FACE_DETECT": "face_detect.json", "EEG_SEIZURE": "eeg_seizure.json"}
AES_BLOCK = 16


class OptLevel(IntEnum):
    SW1 = 0
    SW4 = 1
    SW4_SIMD = 2
    HWCE16 = 3
    HWCE8 = 4
    HWCE4 = 5
    PLUS_HWCRYPT = 6

    @classmethod
    def parse(cls, s) -> "OptLevel":
        if isinstance(s, OptLevel):
            return s
        try:
            return cls[str(s).upper()]
        except KeyError:
            raise ValueError(f"unknown optimization level {s!r}") from None

    @property
    def cores(self) -> int:
        return 1 if self == OptLevel.SW1 else 4

    @property
    def simd(self) -> bool:
        return self >= OptLevel.SW4_SIMD

    @property
    def hwce_precision(self) -> Optional[int]:
        return {OptLevel.HWCE16: 16, OptLevel.HWCE8: 8}.get(self, 4 if self >= OptLevel.HWCE4 else None)

    @property
    def hwcrypt(self) -> bool:
        return self == OptLevel.PLUS_HWCRYPT


def load_spec(uc_id: str) -> Dict[str, Any]:
    if uc_id not in _FILES:
        raise UnknownUseCase(f"unknown use case {uc_id!r}; expected one of {USE_CASES}")
    return json.loads(resources.files("secnode.usecases").joinpath(_FILES[uc_id]).read_text())


def equivalent_ops(uc_id: str) -> float:
    """Equivalent RISC instruction count of one iteration (independent of level)."""
    return float(load_spec(uc_id)["equivalent_ops"])


@dataclass
class Workload:
    id: str
    level: OptLevel
    vdd: float
    phases: List[Phase]
    memories: Tuple[str, ...]
    mode_policy: Tuple[OperatingMode, ...]
    equivalent_ops: float
    period_s: Optional[float]
    meta: Dict[str, Any]


def _blocks(nbytes: float) -> int:
    return int(math.ceil(nbytes / AES_BLOCK)) * AES_BLOCK


class _Builder:
    """Accumulates phases with readable ids and simple dependency chaining."""

    def __init__(self, level: OptLevel):
        self.level = level
        self.phases: List[Phase] = []
        self.counts: Dict[str, float] = {}

    def add(self, pid: str, kind: PhaseKind, payload: Dict[str, Any], category: str,
            deps=(), overlappable: bool = False) -> str:
        self.phases.append(Phase(pid, kind, payload, category, tuple(d for d in deps if d), overlappable))
        return pid

    def crypt(self, pid: str, nbytes: float, deps=(), jobs: int = 1, direction: str = "decrypt") -> Optional[str]:
        nbytes = _blocks(nbytes)
        if not nbytes:
            return None
        self.counts["xts_bytes"] = self.counts.get("xts_bytes", 0) + nbytes
        if self.level.hwcrypt:
            return self.add(pid, PhaseKind.HWCRYPT, {"op": "XTS", "nbytes": nbytes, "jobs": max(1, jobs),
                                                     "direction": direction}, "AES_KEC", deps)
        return self.add(pid, PhaseKind.SW, {"kernel": "aes_xts", "units": nbytes, "cores": self.level.cores,
                                            "simd": False}, "AES_KEC", deps)

    def sw(self, pid: str, kernel: str, units: float, category: str, deps=()) -> str:
        return self.add(pid, PhaseKind.SW, {"kernel": kernel, "units": units, "cores": self.level.cores,
                                            "simd": self.level.simd}, category, deps)

    def conv(self, pid: str, fs: int, px_ops: float, n_tiles: int, in_ch: int, deps=()) -> str:
        """``px_ops`` counts single-channel fs x fs output-pixel evaluations."""
        prec = self.level.hwce_precision
        if prec is None:
            return self.sw(pid, f"conv{fs}x{fs}", px_ops, "CONV", deps)
        n_maps = {16: 1, 8: 2, 4: 4}[prec]
        jobs = max(1, n_tiles * in_ch)
        return self.add(pid, PhaseKind.HWCE, {"fs": fs, "precision": prec, "jobs": jobs,
                                              "out_w": px_ops / (jobs * n_maps), "out_h": 1}, "CONV", deps)

    def dma(self, pid: str, nbytes: float, transfers: int, deps=()) -> Optional[str]:
        if nbytes <= 0:
            return None
        return self.add(pid, PhaseKind.DMA, {"nbytes": int(nbytes), "transfers": max(1, transfers)}, "DMA_OTHER",
                        deps, overlappable=True)

    def ext(self, pid: str, memory: str, nbytes: float, direction: str, deps=()) -> Optional[str]:
        if nbytes <= 0:
            return None
        cat = "FLASH" if memory == "flash" else "FRAM"
        self.counts[f"{memory}_{direction}_bytes"] = self.counts.get(f"{memory}_{direction}_bytes", 0) + int(nbytes)
        return self.add(pid, PhaseKind.EXTMEM, {"memory": memory, "nbytes": int(nbytes), "direction": direction},
                        cat, deps, overlappable=True)


def _build_uav(spec, level: OptLevel, platform: PlatformConfig) -> Tuple[List[Phase], Dict[str, Any]]:
    b = _Builder(level)
    layers = spec["layers"]
    raw_ops = sum(L["out_w"] * L["out_h"] * L["in_ch"] * L["out_ch"] * L["fs"] ** 2 for L in layers)
    op_scale = spec["conv_op_total"] / raw_ops
    w_prec = level.hwce_precision or 16
    weight_total = spec["weight_bytes_16bit"] * w_prec / 16
    params = [L["out_ch"] * L["in_ch"] * L["fs"] ** 2 for L in layers]
    pxb = spec["feature_bytes_per_px"]
    K = spec["segments_per_layer"]
    prev_writes: List[str] = []
    peak_partial = 0
    for li, L in enumerate(layers):
        g = LayerGeometry(L["out_w"], L["out_h"], L["in_ch"], L["out_ch"], L["fs"], pxb)
        tiles = tile_plan(g, w_prec, platform.tcdm_bytes)
        segs = min(K, len(tiles))
        px_ops = L["out_w"] * L["out_h"] * L["in_ch"] * L["out_ch"] * op_scale
        w_bytes = weight_total * params[li] / sum(params)
        in_bytes = 0 if li == 0 else L["out_w"] * L["stride"] * L["out_h"] * L["stride"] * L["in_ch"] * pxb
        out_bytes = L["out_w"] * L["out_h"] * L["out_ch"] * pxb
        peak_partial = max(peak_partial, out_bytes)
        # reads of segment k+1 are issued before segment k computes (double buffering)
        reads: List[Tuple[Optional[str], Optional[str]]] = []

        def issue_reads(k: int) -> None:
            tag = f"{L['name']}.{k}"
            reads.append((b.ext(f"{tag}.flash", "flash", w_bytes / segs, "read"),
                          b.ext(f"{tag}.fram_rd", "fram", in_bytes / segs, "read", deps=prev_writes)))

        issue_reads(0)
        writes = []
        for k in range(segs):
            if k + 1 < segs:
                issue_reads(k + 1)
            n_t = len(tiles[k::segs])
            tag = f"{L['name']}.{k}"
            din = b.dma(f"{tag}.dma_in", (w_bytes + in_bytes) / segs, 2 * n_t, deps=reads[k])
            dec = b.crypt(f"{tag}.decrypt", (w_bytes + in_bytes) / segs, deps=(din,), jobs=n_t)
            cv = b.conv(f"{tag}.conv", L["fs"], px_ops / segs, n_t, L["in_ch"], deps=(dec or din,))
            ot = b.sw(f"{tag}.act", "other", out_bytes / pxb / segs, "DMA_OTHER", deps=(cv,))
            enc = b.crypt(f"{tag}.encrypt", out_bytes / segs, deps=(ot,), jobs=n_t, direction="encrypt")
            dout = b.dma(f"{tag}.dma_out", out_bytes / segs, n_t, deps=(enc,))
            writes.append(b.ext(f"{tag}.fram_wr", "fram", out_bytes / segs, "write", deps=(dout,)))
        prev_writes = writes
    # global pooling and the final dense classifier
    last = layers[-1]
    feat = last["out_w"] * last["out_h"] * last["out_ch"] * pxb
    fr = b.ext("head.fram_rd", "fram", feat, "read", deps=prev_writes)
    din = b.dma("head.dma_in", feat, 4, deps=(fr,))
    dec = b.crypt("head.decrypt", feat, deps=(din,), jobs=4)
    pool = b.sw("head.pool", "other", spec["dense"]["pool_elements"], "DMA_OTHER", deps=(dec,))
    b.sw("head.fc", "dense", spec["dense"]["macs"], "DENSE", deps=(pool,))
    meta = dict(b.counts, conv_op_scale=op_scale, weight_bytes=weight_total, partial_peak_bytes=peak_partial)
    return b.phases, meta


def _build_face(spec, level: OptLevel, platform: PlatformConfig) -> Tuple[List[Phase], Dict[str, Any]]:
    b = _Builder(level)
    fw, fh, fc = spec["frame"]
    s1, s2 = spec["stage1"], spec["stage2"]
    # frame arrives in L2 through the uDMA; downscaling and stage 1 run on tiles
    frame_bytes = fw * fh * fc
    d0 = b.dma("frame.dma_in", frame_bytes, 8)
    rs = b.sw("frame.resize", "other", spec["resize_elements"], "DMA_OTHER", deps=(d0,))
    c1 = s1["conv"]
    g1 = LayerGeometry(c1["out_w"], c1["out_h"], c1["in_ch"], c1["out_ch"], c1["fs"])
    t1 = tile_plan(g1, level.hwce_precision or 16, platform.tcdm_bytes)
    cv1 = b.conv("s1.conv", c1["fs"], c1["out_w"] * c1["out_h"] * c1["in_ch"] * c1["out_ch"], len(t1), c1["in_ch"],
                 deps=(rs,))
    p1 = b.sw("s1.pool", "other", s1["pool_elements"], "DMA_OTHER", deps=(cv1,))
    fc1 = b.sw("s1.dense", "dense", s1["windows"] * s1["dense_macs_per_window"], "DENSE", deps=(p1,))
    area = (fw // s2["input_downscale"]) * (fh // s2["input_downscale"])
    n2 = max(1, math.ceil(spec["trigger_fraction"] * area / s2["window"] ** 2))
    c2 = s2["conv"]
    win_bytes = s2["window"] ** 2 * c2["in_ch"] * 2
    d2 = b.dma("s2.dma_in", n2 * win_bytes, n2, deps=(fc1,))
    cv2 = b.conv("s2.conv", c2["fs"], n2 * c2["out_w"] * c2["out_h"] * c2["in_ch"] * c2["out_ch"], n2, c2["in_ch"],
                 deps=(d2,))
    p2 = b.sw("s2.pool", "other", n2 * s2["pool_elements_per_window"], "DMA_OTHER", deps=(cv2,))
    fc2 = b.sw("s2.dense", "dense", n2 * s2["dense_macs_per_window"], "DENSE", deps=(p2,))
    # potential face: the whole frame is encrypted for remote recognition
    enc_tiles = math.ceil(spec["encrypt_bytes"] / 8192)
    ed = b.dma("frame.dma_enc_in", spec["encrypt_bytes"], enc_tiles, deps=(fc2,))
    enc = b.crypt("frame.encrypt", spec["encrypt_bytes"], deps=(ed,), jobs=enc_tiles, direction="encrypt")
    b.dma("frame.dma_enc_out", spec["encrypt_bytes"], enc_tiles, deps=(enc,))
    return b.phases, dict(b.counts, stage2_windows=n2)


def _build_eeg(spec, level: OptLevel, platform: PlatformConfig) -> Tuple[List[Phase], Dict[str, Any]]:
    b = _Builder(level)
    n = spec["window_samples"]
    win_bytes = n * spec["channels"] * spec["sample_bytes"]
    comp_bytes = n * spec["components"] * spec["sample_bytes"]
    d0 = b.dma("win.dma_in", win_bytes, 1, deps=())
    pca = b.sw("pca", "pca", spec["kernels"]["pca"], "DMA_OTHER", deps=(d0,))
    enc = b.crypt("pca.encrypt", comp_bytes, deps=(pca,), jobs=1, direction="encrypt")
    dwt = b.sw("dwt", "dwt", spec["kernels"]["dwt"], "DMA_OTHER", deps=(pca,))
    b.sw("svm", "svm", spec["kernels"]["svm"], "DENSE", deps=(dwt,))
    b.dma("pca.dma_out", comp_bytes, 1, deps=(enc,))
    return b.phases, dict(b.counts, window_bytes=win_bytes)


_BUILDERS = {"UAV_RESNET20": _build_uav, "FACE_DETECT": _build_face, "EEG_SEIZURE": _build_eeg}


def build(uc_id: str, level="PLUS_HWCRYPT", vdd: float = 0.8,
          platform: Optional[PlatformConfig] = None) -> Workload:
    """Phase graph for one iteration of a use case at an optimization level."""
    spec = load_spec(uc_id)
    level = OptLevel.parse(level)
    platform = platform or PlatformConfig()
    phases, meta = _BUILDERS[uc_id](spec, level, platform)
    return Workload(
        id=uc_id,
        level=level,
        vdd=vdd,
        phases=phases,
        memories=tuple(spec["memories"]),
        mode_policy=tuple(OperatingMode(m) for m in spec["mode_policy"]),
        equivalent_ops=float(spec["equivalent_ops"]),
        period_s=spec["period_s"],
        meta=meta,
    )


def platform_for(wl: Workload, model: Optional[PerfModel] = None, **overrides) -> PlatformConfig:
    """Platform with only the workload's external memories attached."""
    base = PlatformConfig(model=model or default_model(), **overrides)
    base.memories = {k: v for k, v in base.memories.items() if k in wl.memories}
    return base


def simulate(uc_id: str, level="PLUS_HWCRYPT", vdd: float = 0.8, model: Optional[PerfModel] = None,
             overlap: bool = True) -> SimReport:
    model = model or default_model()
    probe = PlatformConfig(model=model)
    wl = build(uc_id, level, vdd, probe)
    platform = platform_for(wl, model)
    phases = wl.phases
    if not overlap:
        phases = [Phase(p.id, p.kind, p.payload, p.category, p.deps, False, p.modes, p.pinned_mode, p.repeat)
                  for p in phases]
    tl = schedule(phases, platform, vdd, wl.mode_policy)
    rep = run(tl, platform, wl.equivalent_ops)
    rep.meta.update({"usecase": uc_id, "level": wl.level.name})
    rep.meta.update({f"workload.{k}": v for k, v in sorted(wl.meta.items())})
    return rep


@dataclass(frozen=True)
class BatteryProjection:
    iterations: int
    lifetime_s: float
    energy_per_iteration: float
    period_s: float

    def energy_for(self, iterations: int) -> float:
        return self.energy_per_iteration * iterations


def battery_projection(uc_id: str, battery_joules: float, duty: Optional[float] = None,
                       report: Optional[SimReport] = None, model: Optional[PerfModel] = None,
                       sleep_state: str = "deep_sleep") -> BatteryProjection:
    """Iterations and lifetime on a battery.

    ``duty`` is the iteration period in seconds; ``None`` uses the use case's
    own cadence, or back-to-back execution when it has none.
    """
    if battery_joules <= 0:
        raise ValueError("battery_joules must be positive")
    model = model or default_model()
    report = report or simulate(uc_id, "PLUS_HWCRYPT", 0.8, model)
    period = duty if duty is not None else load_spec(uc_id)["period_s"]
    if period is None or period <= report.total_seconds:
        period = report.total_seconds
        e_iter = report.total_joules
    else:
        wl = build(uc_id, "PLUS_HWCRYPT", report.vdd, PlatformConfig(model=model))
        e_iter = sleep_between(1, period, report, platform_for(wl, model), sleep_state).energy_per_period
    iters = int(math.floor(battery_joules / e_iter))
    return BatteryProjection(iters, iters * period, e_iter, period)
