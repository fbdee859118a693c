import json

import pytest

from secnode import perf
from secnode.errors import UnknownKernel, UnknownUnit, VddOutOfRange
from secnode.perf import Calibration, OperatingMode, PerfModel, cores

VALID_PROVENANCE = {"measured", "derived", "fitted", "model"}


@pytest.fixture(scope="module")
def model():
    return perf.default_model()


@pytest.mark.parametrize("mode,mhz", [("CRY_CNN_SW", 85), ("KEC_CNN_SW", 104), ("SW", 120)])
def test_frequency_anchor_at_low_voltage(model, mode, mhz):
    assert model.frequency_of(mode, 0.8) == pytest.approx(mhz * 1e6)


def test_frequency_monotone_and_ordered(model):
    vdds = [0.8 + 0.02 * i for i in range(21)]
    for mode in OperatingMode:
        f = [model.frequency_of(mode, v) for v in vdds]
        assert all(b >= a for a, b in zip(f, f[1:]))
    for v in vdds:
        assert model.frequency_of("SW", v) >= model.frequency_of("KEC_CNN_SW", v) >= model.frequency_of("CRY_CNN_SW", v)


@pytest.mark.parametrize("vdd", [0.7, 1.25])
def test_vdd_out_of_range(model, vdd):
    with pytest.raises(VddOutOfRange):
        model.frequency_of("SW", vdd)


def test_hwcrypt_cycles(model):
    assert model.cycles_hwcrypt("ECB", 8192) == pytest.approx(3100, rel=0.02)
    assert model.cycles_hwcrypt("XTS", 8192) == model.cycles_hwcrypt("ECB", 8192)
    setup = model.cost["hwcrypt_setup_cycles"]
    base = model.cycles_hwcrypt("SPONGE_AE", 4096) - setup
    assert base / 4096 == pytest.approx(0.51)
    assert model.cycles_hwcrypt("SPONGE_AE", 4096, rate_bits=64) - setup == pytest.approx(2 * base)
    assert model.cycles_hwcrypt("SPONGE_AE", 4096, rounds=10) - setup < base
    with pytest.raises(UnknownKernel):
        model.cycles_hwcrypt("CBC", 16)


def test_hwce_precision_speedup(model):
    for fs in (3, 5):
        c16 = model.hwce_cyc_per_px(fs, 16)
        c4 = model.hwce_cyc_per_px(fs, 4)
        assert 2.4 < c16 / c4 < 2.6
    with pytest.raises(UnknownKernel):
        model.hwce_cyc_per_px(7, 16)


def test_hwce_cycles_include_fill(model):
    cyc = model.cycles_hwce(10, 10, 5, 16)
    fill = model.cost["hwce_job_setup_cycles"] + 4 * model.cost["hwce_linebuffer_fill_per_row"]
    assert cyc == pytest.approx(fill + 100 * 1.14)


def test_sw_rates(model):
    assert model.sw_rate("conv5x5", 1, False) == pytest.approx(94)
    assert model.sw_rate("conv5x5", 4, True) == pytest.approx(13)
    assert model.sw_rate("aes_ecb", 1, False) / model.cost["hwcrypt_ecb_cpb"] == pytest.approx(450, rel=1e-3)
    assert model.sw_rate("aes_xts", 4, False) < model.sw_rate("aes_xts", 1, False)
    with pytest.raises(UnknownKernel):
        model.sw_rate("fft", 1, False)


def test_parallel_overhead(model):
    one = model.cycles_sw("dense", 1000, 1)
    four = model.cycles_sw("dense", 1000, 4)
    assert four < one
    assert model.cycles_sw("dense", 0, 4) == 0


def test_full_load_power_at_high_voltage(model):
    for mode in OperatingMode:
        p = model.power_mw(model.point(mode, 1.2), model.full_load_units(mode))
        assert p == pytest.approx(120, rel=0.10)


def test_idle_power(model):
    pt = model.point("SW")
    assert model.power_mw(pt, ()) <= 1.0 + 0.4 + 1e-9
    assert model.power_mw(pt, (), sleep="idle") - model.power_mw(pt, (), sleep="idle_fll_off") == pytest.approx(0.4)
    assert model.power_mw(pt, (), sleep="deep_sleep") < model.power_mw(pt, (), sleep="idle_fll_off")


def test_power_grows_with_units_and_voltage(model):
    pt = model.point("CRY_CNN_SW")
    assert model.power_mw(pt, cores(4)) > model.power_mw(pt, cores(1))
    assert model.power_mw(pt, {"hwcrypt_aes"} | cores(1)) > model.power_mw(pt, cores(1))
    hi = model.point("CRY_CNN_SW", 1.0)
    assert model.power_mw(hi, cores(1)) > model.power_mw(pt, cores(1))
    with pytest.raises(UnknownUnit):
        model.power_mw(pt, {"gpu"})


def test_mode_switch_cost(model):
    assert model.mode_switch_cost("SW", "CRY_CNN_SW") == pytest.approx(100e-6)
    assert model.mode_switch_cost("SW", "SW") == 0
    assert model.mode_switch_cost(None, "SW") == 0


def test_zero_cycles_zero_energy(model):
    assert model.energy_of(0, model.point("SW"), cores(4)) == 0


def test_calibration_provenance_labels(model):
    prov = model.cal.provenance
    assert prov and set(prov.values()) <= VALID_PROVENANCE
    assert prov["cost_table.hwcrypt_ecb_cpb"] == "measured"


def test_calibration_hash_and_override(tmp_path, monkeypatch, model):
    raw = json.loads(model.cal.canonical_json())
    assert Calibration(raw).hash == model.cal.hash
    raw["power_table"]["soc_active_mw"] = 5.0
    path = tmp_path / "cal.json"
    path.write_text(json.dumps(raw))
    monkeypatch.setenv(perf.CALIBRATION_ENV, str(path))
    other = PerfModel()
    assert other.cal.hash != model.cal.hash
    assert other.soc_mw(0.8) == 5.0


def test_calibration_missing_section():
    with pytest.raises(ValueError):
        Calibration({"frequencies": {}})
