import math

import pytest

from secnode import workloads as wl
from secnode.errors import UnknownUseCase
from secnode.perf import OperatingMode
from secnode.sim import PhaseKind, PlatformConfig, schedule
from secnode.workloads import OptLevel

FACE_BATTERY_J = 4 * 0.150 * 3600
EEG_BATTERY_J = 2 * 3600 * 3.3


@pytest.fixture(scope="module")
def reports():
    return {(uc, lvl): wl.simulate(uc, lvl) for uc in wl.USE_CASES for lvl in OptLevel}


def test_opt_level_properties():
    assert OptLevel.parse("sw4_simd") == OptLevel.SW4_SIMD
    assert [OptLevel(l).hwce_precision for l in OptLevel] == [None, None, None, 16, 8, 4, 4]
    assert OptLevel.SW1.cores == 1 and OptLevel.HWCE4.cores == 4
    assert OptLevel.PLUS_HWCRYPT.hwcrypt and not OptLevel.HWCE4.hwcrypt
    with pytest.raises(ValueError):
        OptLevel.parse("turbo")


def test_unknown_use_case():
    with pytest.raises(UnknownUseCase):
        wl.build("MNIST", "SW1")


@pytest.mark.parametrize("uc", wl.USE_CASES)
def test_equivalent_ops_level_independent(uc, reports):
    ops = {reports[uc, l].equivalent_ops for l in OptLevel}
    assert ops == {wl.equivalent_ops(uc)}


@pytest.mark.parametrize("uc", wl.USE_CASES)
def test_monotone_across_levels(uc, reports):
    e = [reports[uc, l].total_joules for l in OptLevel]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(e, e[1:])), e


def test_uav_uses_both_accelerator_modes():
    w = wl.build("UAV_RESNET20", "PLUS_HWCRYPT")
    tl = schedule(w.phases, wl.platform_for(w, PlatformConfig().model), w.vdd, w.mode_policy)
    modes = {e.mode for e in tl.events if e.kind in (PhaseKind.HWCRYPT, PhaseKind.HWCE)}
    assert OperatingMode.CRY_CNN_SW in modes
    assert tl.mode_switches >= 1


def test_face_sw1_has_no_accelerators():
    kinds = {p.kind for p in wl.build("FACE_DETECT", "SW1").phases}
    assert PhaseKind.HWCE not in kinds and PhaseKind.HWCRYPT not in kinds


def test_eeg_single_xts_phase():
    phases = wl.build("EEG_SEIZURE", "PLUS_HWCRYPT").phases
    xts = [p for p in phases if p.kind == PhaseKind.HWCRYPT]
    assert len(xts) == 1 and xts[0].payload["op"] == "XTS"


@pytest.mark.parametrize("level,scale", [("HWCE16", 1.0), ("HWCE8", 0.5), ("HWCE4", 0.25)])
def test_uav_flash_bytes_scale_with_precision(level, scale, reports):
    meta = reports["UAV_RESNET20", OptLevel[level]].meta
    full = wl.load_spec("UAV_RESNET20")["weight_bytes_16bit"]
    assert full == pytest.approx(8.9 * 2 ** 20, rel=0.01)
    assert meta["workload.flash_read_bytes"] == pytest.approx(scale * full, rel=1e-3)


def test_uav_partial_peak_fits_reported_size(reports):
    peak = reports["UAV_RESNET20", OptLevel.PLUS_HWCRYPT].meta["workload.partial_peak_bytes"]
    assert round(peak / 2 ** 20, 1) <= 1.5


def test_uav_fram_traffic_balanced(reports):
    meta = reports["UAV_RESNET20", OptLevel.PLUS_HWCRYPT].meta
    assert meta["workload.fram_read_bytes"] == meta["workload.fram_write_bytes"] > 0


def test_eeg_aes_share_small(reports):
    rep = reports["EEG_SEIZURE", OptLevel.PLUS_HWCRYPT]
    assert rep.categories["AES_KEC"] / rep.total_joules < 0.02


def test_uav_peak_power(reports):
    assert reports["UAV_RESNET20", OptLevel.PLUS_HWCRYPT].peak_power_mw <= 30


def test_battery_projection_uav(reports):
    rep = reports["UAV_RESNET20", OptLevel.PLUS_HWCRYPT]
    proj = wl.battery_projection("UAV_RESNET20", 2590, report=rep)
    assert proj.iterations == math.floor(2590 / rep.total_joules)
    assert proj.energy_for(235) == pytest.approx(6.4, rel=0.15)
    assert proj.energy_for(235) / 2590 < 0.0025


def test_battery_projection_face(reports):
    rep = reports["FACE_DETECT", OptLevel.PLUS_HWCRYPT]
    days = wl.battery_projection("FACE_DETECT", FACE_BATTERY_J, report=rep).lifetime_s / 86400
    assert days == pytest.approx(1.6, rel=0.20)


def test_battery_projection_eeg(reports):
    rep = reports["EEG_SEIZURE", OptLevel.PLUS_HWCRYPT]
    proj = wl.battery_projection("EEG_SEIZURE", EEG_BATTERY_J, report=rep)
    assert proj.period_s == 0.5
    assert proj.energy_per_iteration > rep.total_joules
    assert proj.iterations > 1e8


def test_battery_projection_validation():
    with pytest.raises(ValueError):
        wl.battery_projection("EEG_SEIZURE", 0)
