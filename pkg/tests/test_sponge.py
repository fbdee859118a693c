import json
import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from secnode.crypto import sponge
from secnode.errors import AuthenticationFailure, KeyIvOverflow, RoundIndexOutOfRange


def random_state(rng):
    return [rng.getrandbits(16) for _ in range(25)]


def test_round_constants_follow_the_lfsr():
    assert list(sponge.ROUND_CONSTANTS) == [oracles.round_constant(i) for i in range(20)]


def test_rotation_offsets_follow_the_coordinate_walk():
    assert list(sponge.RHO) == [oracles.rho_offsets()[i % 5][i // 5] for i in range(25)]


def test_permutation_matches_reference_on_random_states():
    rng = random.Random(7)
    for _ in range(20):
        s = random_state(rng)
        assert sponge.keccak_f400(s) == oracles.keccak_p400(s)


def test_zero_state_is_not_fixed():
    assert sponge.keccak_f400([0] * 25) != [0] * 25


@pytest.mark.parametrize("first", [0, 3, 9, 14])
def test_round_composition(first):
    s = random_state(random.Random(first))
    two_steps = sponge.keccak_f400(sponge.keccak_f400(s, 3, first), 3, first + 3)
    assert two_steps == sponge.keccak_f400(s, 6, first)


def test_round_index_bounds():
    with pytest.raises(RoundIndexOutOfRange):
        sponge.keccak_f400([0] * 25, 3, 18)
    with pytest.raises(RoundIndexOutOfRange):
        sponge.keccak_f400([0] * 25, 21)
    assert sponge.keccak_f400([1] * 25, 0) == [1] * 25


def test_state_byte_layout_roundtrip():
    rng = random.Random(8)
    lanes = random_state(rng)
    raw = sponge.state_to_bytes(lanes)
    assert len(raw) == 50
    assert raw[:2] == lanes[0].to_bytes(2, "little")
    assert sponge.state_from_bytes(raw) == lanes


def test_golden_vectors(vectors_dir):
    recs = json.loads((vectors_dir / "sponge_vectors.json").read_text())
    assert len(recs) >= 30
    for r in recs:
        cfg = sponge.SpongeConfig(bytes.fromhex(r["key_hex"]), bytes.fromhex(r["iv_hex"]), r["rate"], r["rounds"])
        msg = sponge.auth_encrypt(cfg, bytes.fromhex(r["pt_hex"]))
        assert msg.ciphertext.hex() == r["ct_hex"]
        assert msg.tag.hex() == r["tag_hex"]
        assert sponge.auth_decrypt(cfg, msg).hex() == r["pt_hex"]


@pytest.mark.parametrize("rate", sponge.VALID_RATES)
def test_data_call_count_is_ceil_bits_over_rate(rate):
    cfg = sponge.SpongeConfig(bytes(16), rate_bits=rate, rounds_per_call=3)
    ctx = sponge.SpongeContext(cfg)
    ctx.encrypt(bytes(5))
    assert ctx.data_calls == -(-40 // rate)
    assert ctx.permutation_calls == ctx.data_calls + 1


def test_halving_the_rate_doubles_the_calls():
    data = bytes(64)
    calls = {}
    for rate in (128, 64):
        ctx = sponge.SpongeContext(sponge.SpongeConfig(bytes(16), rate_bits=rate))
        ctx.encrypt(data)
        calls[rate] = ctx.data_calls
    assert calls[64] == 2 * calls[128]


def test_config_validation():
    with pytest.raises(ValueError):
        sponge.SpongeConfig(bytes(16), rate_bits=24)
    with pytest.raises(ValueError):
        sponge.SpongeConfig(bytes(16), rounds_per_call=4)
    with pytest.raises(KeyIvOverflow):
        sponge.SpongeConfig(bytes(16), iv=bytes(35))
    # a full-width IV leaves no room for the MAC domain byte
    cfg = sponge.SpongeConfig(bytes(16), iv=bytes(34))
    with pytest.raises(KeyIvOverflow):
        sponge.auth_encrypt(cfg, b"x")


def test_tampered_tag_releases_nothing():
    cfg = sponge.SpongeConfig(bytes(range(16)), iv=b"nonce-01")
    msg = sponge.auth_encrypt(cfg, b"secret payload")
    bad = sponge.AuthCiphertext(msg.ciphertext, bytes([msg.tag[0] ^ 1]) + msg.tag[1:])
    with pytest.raises(AuthenticationFailure):
        sponge.auth_decrypt(cfg, bad)


def test_encryption_depends_on_iv():
    a = sponge.sponge_encrypt(sponge.SpongeConfig(bytes(16), iv=b"a"), bytes(32))
    b = sponge.sponge_encrypt(sponge.SpongeConfig(bytes(16), iv=b"b"), bytes(32))
    assert a != b


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=16, max_size=16), st.binary(max_size=16), st.binary(max_size=40),
       st.sampled_from([128, 64, 32]), st.sampled_from([20, 18, 6, 3]))
def test_auth_roundtrip_property(key, iv, pt, rate, rounds):
    cfg = sponge.SpongeConfig(key, iv, rate, rounds)
    msg = sponge.auth_encrypt(cfg, pt)
    assert len(msg.ciphertext) == len(pt)
    assert sponge.auth_decrypt(cfg, msg) == pt
