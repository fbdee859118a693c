"""Calibrated timing and power model of the cluster.

All numbers come from a calibration JSON file (see ``calibration/default.json``)
whose leaf entries are ``{"value": ..., "provenance": ...}``. The model is
immutable once loaded and can be shared freely between threads.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from .errors import UnknownKernel, UnknownUnit, VddOutOfRange

CALIBRATION_ENV = "SECNODE_CALIBRATION"
VDD_NOMINAL = 0.8


class OperatingMode(str, Enum):
    CRY_CNN_SW = "CRY_CNN_SW"
    KEC_CNN_SW = "KEC_CNN_SW"
    SW = "SW"


# units usable in each mode
MODE_UNITS = {
    OperatingMode.CRY_CNN_SW: {"hwcrypt_aes", "hwcrypt_kec", "hwce", "dma"},
    OperatingMode.KEC_CNN_SW: {"hwcrypt_kec", "hwce", "dma"},
    OperatingMode.SW: {"dma"},
}
CORE_UNITS = tuple(f"core{i}" for i in range(4))
ACCEL_UNITS = ("hwcrypt_aes", "hwcrypt_kec", "hwce", "dma")
SLEEP_STATES = ("idle", "idle_fll_off", "deep_sleep")


def cores(n: int) -> frozenset:
    """Unit names for ``n`` active cores."""
    return frozenset(CORE_UNITS[:n])


@dataclass(frozen=True)
class OperatingPoint:
    mode: OperatingMode
    vdd: float
    freq: float  # Hz


def _strip(node: Any) -> Any:
    """Drop provenance wrappers, keeping only values."""
    if isinstance(node, dict):
        if "value" in node and "provenance" in node:
            return node["value"]
        return {k: _strip(v) for k, v in node.items()}
    return node


def _provenance(node: Any, prefix: str = "") -> Dict[str, str]:
    out: Dict[str, str] = {}
    if isinstance(node, dict):
        if "value" in node and "provenance" in node:
            out[prefix] = node["provenance"]
        else:
            for k, v in node.items():
                out.update(_provenance(v, f"{prefix}.{k}" if prefix else k))
    return out


class Calibration:
    """Parsed calibration file: frequencies, cost table, power table."""

    SECTIONS = ("frequencies", "cost_table", "power_table")

    def __init__(self, raw: Mapping[str, Any], source: str = "<memory>"):
        missing = [s for s in self.SECTIONS if s not in raw]
        if missing:
            raise ValueError(f"calibration {source} missing sections {missing}")
        self.raw = json.loads(json.dumps(raw))
        self.source = source
        self.frequencies = _strip(raw["frequencies"])
        self.cost = _strip(raw["cost_table"])
        self.power = _strip(raw["power_table"])
        self.provenance = _provenance({s: raw[s] for s in self.SECTIONS})
        self.hash = hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path=None) -> "Calibration":
        if path is None:
            path = os.environ.get(CALIBRATION_ENV)
        if path is None:
            text = resources.files("secnode.calibration").joinpath("default.json").read_text()
            return cls(json.loads(text), "default")
        path = Path(path)
        return cls(json.loads(path.read_text()), str(path))


class PerfModel:
    def __init__(self, calibration: Optional[Calibration] = None):
        self.cal = calibration or Calibration.load()
        self.cost = self.cal.cost
        self.pw = self.cal.power
        self._vdds = sorted(float(v) for v in next(iter(self.cal.frequencies.values())))

    # -- frequency ---------------------------------------------------------

    def _interp(self, table: Mapping[str, float], vdd: float) -> float:
        pts = sorted((float(k), float(v)) for k, v in table.items())
        lo, hi = pts[0][0], pts[-1][0]
        if not lo - 1e-9 <= vdd <= hi + 1e-9:
            raise VddOutOfRange(f"vdd {vdd} V outside [{lo}, {hi}] V")
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if vdd <= x1 + 1e-12:
                return y0 + (y1 - y0) * (vdd - x0) / (x1 - x0)
        return pts[-1][1]

    def frequency_of(self, mode: OperatingMode, vdd: float) -> float:
        """Maximum cluster frequency in Hz, piecewise-linear in vdd."""
        mode = OperatingMode(mode)
        return self._interp(self.cal.frequencies[mode.value], vdd) * 1e6

    def point(self, mode: OperatingMode, vdd: float = VDD_NOMINAL) -> OperatingPoint:
        mode = OperatingMode(mode)
        return OperatingPoint(mode, vdd, self.frequency_of(mode, vdd))

    # -- cycle costs -------------------------------------------------------

    def cycles_hwcrypt(self, kind: str, nbytes: int, rate_bits: int = 128, rounds: int = 20) -> float:
        c = self.cost
        if nbytes < 0:
            raise ValueError("nbytes must be >= 0")
        kind = kind.upper()
        if kind == "ECB":
            cpb = c["hwcrypt_ecb_cpb"]
        elif kind == "XTS":
            cpb = c["hwcrypt_xts_cpb"]
        elif kind == "SPONGE_AE":
            # permutation-call count scales with 1/rate and with 3-round steps per call
            scale = (128 / rate_bits) * (math.ceil(rounds / 3) / math.ceil(20 / 3))
            cpb = c["sponge_cpb_at_rate128_r20"] * scale
        else:
            raise UnknownKernel(f"unknown hwcrypt kind {kind!r}")
        return c["hwcrypt_setup_cycles"] + cpb * nbytes

    def hwce_cyc_per_px(self, fs: int, precision: int) -> float:
        try:
            return self.cost["hwce_cyc_per_px"][f"{fs}x{fs}"][str(precision)]
        except KeyError:
            raise UnknownKernel(f"no HWCE cost for {fs}x{fs} at {precision} bit") from None

    def cycles_hwce(self, out_w: int, out_h: int, fs: int, precision: int, rows: Optional[int] = None,
                    n_maps: int = 1) -> float:
        """Job setup + line-buffer fill + per-output-pixel cost.

        ``n_maps`` counts concurrent output maps (2 or 4 in scaled modes);
        the per-pixel cost applies to every produced pixel.
        """
        c = self.cost
        rows = fs - 1 if rows is None else rows
        fill = c["hwce_job_setup_cycles"] + c["hwce_linebuffer_fill_per_row"] * rows
        return fill + self.hwce_cyc_per_px(fs, precision) * out_w * out_h * n_maps

    def sw_rate(self, kernel: str, cores: int, simd: bool) -> float:
        tables = {
            "conv5x5": self.cost["sw_conv_cyc_per_px"]["5x5"],
            "conv3x3": self.cost["sw_conv_cyc_per_px"]["3x3"],
            "aes_ecb": self.cost["sw_aes_ecb_cpb"],
            "aes_xts": self.cost["sw_aes_xts_cpb"],
        }
        tables.update(self.cost["sw_generic"])
        if kernel not in tables:
            raise UnknownKernel(f"unknown software kernel {kernel!r}")
        t = tables[kernel]
        if cores not in (1, 4):
            raise ValueError("cores must be 1 or 4")
        if cores == 4:
            return t["4core_simd"] if simd and "4core_simd" in t else t["4core"]
        if simd and "4core_simd" in t:
            return t["1core"] * t["4core_simd"] / t["4core"]
        return t["1core"]

    def cycles_sw(self, kernel: str, work_units: float, cores: int = 1, simd: bool = False) -> float:
        cyc = self.sw_rate(kernel, cores, simd) * work_units
        if cores > 1 and work_units:
            cyc += self.cost["parallel_open_cycles"] + self.cost["barrier_cycles"]
        return cyc

    def cycles_dma(self, nbytes: int, n_transfers: int = 1) -> float:
        c = self.cost
        if nbytes <= 0:
            return 0.0
        return c["dma_setup_cycles"] * n_transfers + math.ceil(nbytes / c["dma_bytes_per_cycle"])

    # -- power -------------------------------------------------------------

    def _scale(self, vdd: float) -> float:
        return (vdd / VDD_NOMINAL) ** 2

    def leakage_mw(self, vdd: float) -> float:
        return self._interp(self.pw["cluster_leakage_mw"], vdd)

    def soc_mw(self, vdd: float) -> float:
        return self.pw["soc_active_mw"] * vdd / VDD_NOMINAL

    def power_mw(self, point: OperatingPoint, active: Iterable[str] = (), sleep: Optional[str] = None) -> float:
        """Cluster + SoC power in mW with the given units busy.

        An empty ``active`` set means the cluster is clock-gated (``idle``
        with FLL on unless ``sleep`` says otherwise).
        """
        active = frozenset(active)
        unknown = active - set(CORE_UNITS) - set(ACCEL_UNITS)
        if unknown:
            raise UnknownUnit(f"unknown units {sorted(unknown)}")
        pw = self.pw
        if not active:
            state = sleep or "idle"
            if state == "deep_sleep":
                return pw["deep_sleep_mw"]
            if state == "idle":
                return pw["idle_cluster_mw"] + pw["fll_mw"]
            if state == "idle_fll_off":
                return pw["idle_cluster_mw"]
            raise ValueError(f"unknown sleep state {state!r}")
        f_mhz = point.freq / 1e6
        dyn = 0.0  # pJ/cycle at nominal voltage
        n_cores = len(active & set(CORE_UNITS))
        if n_cores:
            dyn += pw["dyn_pj_per_cycle"]["cores_common"] + n_cores * pw["dyn_pj_per_cycle"]["core"]
        for u in active & set(ACCEL_UNITS):
            dyn += pw["dyn_pj_per_cycle"][u]
        mode_factor = pw["mode_overhead"][point.mode.value]
        return self.leakage_mw(point.vdd) + self.soc_mw(point.vdd) + dyn * mode_factor * self._scale(point.vdd) * f_mhz * 1e-3

    def energy_of(self, cycles: float, point: OperatingPoint, active: Iterable[str]) -> float:
        """Joules spent running ``cycles`` at ``point`` with ``active`` units."""
        if not cycles:
            return 0.0
        return self.power_mw(point, active) * 1e-3 * cycles / point.freq

    def mode_switch_cost(self, src: Optional[OperatingMode], dst: OperatingMode) -> float:
        """Seconds to relock the FLL for a mode change (0 when unchanged)."""
        if src is None or OperatingMode(src) == OperatingMode(dst):
            return 0.0
        return self.pw["mode_switch_ref_cycles"] / self.pw["ref_clock_hz"]

    def wakeup_seconds(self, state: str) -> float:
        return self.pw["wakeup_s"][state]

    def full_load_units(self, mode: OperatingMode) -> frozenset:
        """Heaviest unit set usable in ``mode`` (accelerators are time-interleaved)."""
        mode = OperatingMode(mode)
        accel = {
            OperatingMode.CRY_CNN_SW: "hwcrypt_aes",
            OperatingMode.KEC_CNN_SW: "hwcrypt_kec",
            OperatingMode.SW: None,
        }[mode]
        units = set(cores(4)) | {"dma"}
        if accel:
            units.add(accel)
        return frozenset(units)


@lru_cache(maxsize=None)
def default_model() -> PerfModel:
    return PerfModel(Calibration.load())
