import json
import os
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

import oracles
from secnode import cli, hwce

KEY = "000102030405060708090a0b0c0d0e0f"
KEY2 = "f0e0d0c0b0a090807060504030201000"
TARGETS = str(resources.files("secnode.usecases").joinpath("targets.json"))


@pytest.fixture
def payload(tmp_path):
    p = tmp_path / "in.bin"
    p.write_bytes(os.urandom(4096))
    return p


@pytest.mark.parametrize("extra", [["--mode", "ecb"], ["--mode", "xts", "--key2", KEY2, "--sector", "7"],
                                   ["--mode", "xts", "--address", "0x3000"], ["--mode", "sponge", "--iv", "0a0b"],
                                   ["--mode", "sponge", "--rate", "64", "--rounds", "6"]])
def test_crypt_roundtrip(tmp_path, payload, extra):
    ct, pt = tmp_path / "ct", tmp_path / "pt"
    assert cli.main(["crypt", *extra, "--key", KEY, str(payload), str(ct)]) == 0
    assert ct.read_bytes()[:4096] != payload.read_bytes()
    assert cli.main(["crypt", *extra, "--direction", "decrypt", "--key", KEY, str(ct), str(pt)]) == 0
    assert pt.read_bytes() == payload.read_bytes()


def test_crypt_xts_matches_library(tmp_path, payload):
    ct = tmp_path / "ct"
    cli.main(["crypt", "--mode", "xts", "--key", KEY, "--key2", KEY2, "--sector", "9", str(payload), str(ct)])
    assert ct.read_bytes() == oracles.xts_encrypt(bytes.fromhex(KEY), bytes.fromhex(KEY2), 9, payload.read_bytes())


def test_crypt_sponge_tamper_exit_3(tmp_path, payload):
    ct = tmp_path / "ct"
    cli.main(["crypt", "--mode", "sponge", "--key", KEY, str(payload), str(ct)])
    data = bytearray(ct.read_bytes())
    data[5] ^= 0x10
    ct.write_bytes(bytes(data))
    rc = cli.main(["crypt", "--mode", "sponge", "--direction", "decrypt", "--key", KEY, str(ct), str(tmp_path / "x")])
    assert rc == 3


def test_crypt_usage_errors(tmp_path):
    odd = tmp_path / "odd"
    odd.write_bytes(b"x" * 20)
    assert cli.main(["crypt", "--mode", "xts", "--key", KEY, str(odd), str(tmp_path / "o")]) == 1
    assert cli.main(["crypt", "--mode", "ecb", "--key", "abcd", str(odd)]) == 1
    assert cli.main(["crypt", "--mode", "cbc", "--key", KEY, str(odd)]) == 1
    assert cli.main(["crypt", "--mode", "ecb", "--key", KEY, str(tmp_path / "missing")]) == 1


def test_usecase_and_verify(tmp_path, capsys):
    rep = tmp_path / "eeg.json"
    assert cli.main(["usecase", "EEG_SEIZURE", "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["meta"]["usecase"] == "EEG_SEIZURE"
    assert cli.main(["verify", str(rep), TARGETS]) == 0
    out = capsys.readouterr().out
    assert "PASS total_joules" in out and "FAIL" not in out
    strict = tmp_path / "strict.json"
    strict.write_text(json.dumps({"total_joules": {"value": 1.0, "rel_tol": 0.01}}))
    assert cli.main(["verify", str(rep), str(strict)]) == 3
    assert "FAIL total_joules" in capsys.readouterr().out


def test_usecase_bad_inputs(tmp_path):
    assert cli.main(["usecase", "MNIST"]) == 1
    assert cli.main(["usecase", "EEG_SEIZURE", "--level", "TURBO"]) == 1
    assert cli.main(["usecase", "EEG_SEIZURE", "--vdd", "1.5"]) == 1


def test_usecase_csv(tmp_path):
    out = tmp_path / "r.csv"
    assert cli.main(["usecase", "FACE_DETECT", "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().startswith("metric,value\n")


def _scenario(tmp_path, name, phases=None, **extra):
    sc = {"vdd": 0.8, **extra}
    if phases is not None:
        sc["phases"] = phases
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(sc))
    return p


PHASES = [
    {"id": "in", "kind": "DMA", "payload": {"nbytes": 8192}, "overlappable": True},
    {"id": "enc", "kind": "HWCRYPT", "payload": {"op": "XTS", "nbytes": 8192}, "category": "AES_KEC",
     "deps": ["in"]},
]


def test_simulate_scenarios_parallel_deterministic(tmp_path):
    a = _scenario(tmp_path, "a", PHASES)
    b = _scenario(tmp_path, "b", usecase_ref={"id": "EEG_SEIZURE", "level": "SW4"})
    serial, par = tmp_path / "serial", tmp_path / "par"
    assert cli.main(["simulate", str(a), str(b), "--out", str(serial)]) == 0
    assert cli.main(["simulate", str(a), str(b), "--out", str(par), "--jobs", "2"]) == 0
    for name in ("a.json", "b.json"):
        assert (serial / name).read_bytes() == (par / name).read_bytes()
    assert json.loads((serial / "b.json").read_text())["meta"]["level"] == "SW4"


def test_simulate_exit_codes(tmp_path):
    cyc = _scenario(tmp_path, "cyc", [{"id": "a", "kind": "DMA", "payload": {"nbytes": 16}, "deps": ["b"]},
                                      {"id": "b", "kind": "DMA", "payload": {"nbytes": 16}, "deps": ["a"]}])
    assert cli.main(["simulate", str(cyc), "--out", str(tmp_path / "o.json")]) == 2
    big = _scenario(tmp_path, "big", PHASES, platform={"tcdm_bytes": 1024})
    big_phases = json.loads(big.read_text())
    big_phases["phases"][1]["payload"]["tcdm_bytes"] = 4096
    big.write_text(json.dumps(big_phases))
    assert cli.main(["simulate", str(big), "--out", str(tmp_path / "o.json")]) == 2
    empty = _scenario(tmp_path, "empty")
    assert cli.main(["simulate", str(empty), "--out", str(tmp_path / "o.json")]) == 1
    assert cli.main(["simulate", str(cyc), str(big)]) == 1


def test_simulate_calibration_ref(tmp_path):
    from secnode.perf import default_model

    raw = json.loads(default_model().cal.canonical_json())
    raw["power_table"]["soc_active_mw"] = 3.0
    (tmp_path / "cal.json").write_text(json.dumps(raw))
    base = _scenario(tmp_path, "base", PHASES)
    alt = _scenario(tmp_path, "alt", PHASES, calibration_ref="cal.json")
    cli.main(["simulate", str(base), str(alt), "--out", str(tmp_path / "out")])
    e = {n: json.loads((tmp_path / "out" / f"{n}.json").read_text())["total_joules"] for n in ("base", "alt")}
    assert e["alt"] > e["base"]


def test_conv_manifest(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = hwce.FeatureMap(8, 8, rng.integers(-200, 200, (8, 8)))
    ws = hwce.WeightSet(3, 8, rng.integers(-128, 128, (2, 9)), q_w=4)
    (tmp_path / "x.bin").write_bytes(hwce.feature_map_to_bytes(x))
    (tmp_path / "w.bin").write_bytes(hwce.weights_to_bytes(ws))
    (tmp_path / "job.json").write_text(json.dumps({"input": "x.bin", "weights": "w.bin", "q_out": 0}))
    assert cli.main(["conv", str(tmp_path / "job.json"), "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary
    expected = oracles.conv_oracle(x.pixels.tolist(), ws.filters.tolist(), 3, 4)
    for k in range(2):
        got = hwce.feature_map_from_bytes((tmp_path / f"out_{k}.bin").read_bytes())
        assert got.pixels.tolist() == expected[k]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "secnode.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "secnode" in res.stdout
    res = subprocess.run([sys.executable, "-m", "secnode.cli"], capture_output=True, text=True)
    assert res.returncode == 1
