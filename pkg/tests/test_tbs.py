import pytest

from attest_sim import codec
from attest_sim.codec import CommandCode, TpmCommand
from attest_sim.errors import BadParameter, LocalityDenied, PolicyMismatch, StaticPcr
from attest_sim.lma_client import LmaClient, Pin
from attest_sim.tbs import TbsTpm, TpmBaseServices
from attest_sim.tpm_core import KeyKind, PcrPolicy, Tpm, verify_quote

from conftest import IMAGE, Rig, oracle_extend


@pytest.fixture
def proxy():
    return TbsTpm(TpmBaseServices(Tpm(seed=3)))


def test_submit_bytes_in_bytes_out():
    tbs = TpmBaseServices(Tpm(seed=0))
    cmd = codec.encode_command(TpmCommand(codec.PcrExtend(20, b"abc"), locality=2))
    out = tbs.submit(cmd)
    assert codec.decode_response(CommandCode.PCR_EXTEND, out) == oracle_extend(bytes(20), b"abc")


def test_garbage_gets_error_response():
    out = TpmBaseServices(Tpm(seed=0)).submit(b"\x00" * 4)
    with pytest.raises(BadParameter):
        codec.decode_response(CommandCode.STARTUP, out)


def test_errors_cross_the_interface(proxy):
    with pytest.raises(StaticPcr):
        proxy.pcr_reset(3, 2)
    with pytest.raises(LocalityDenied):
        proxy.pcr_extend(20, b"x", 0)


def test_proxy_matches_direct():
    direct, proxy = Tpm(seed=9), TbsTpm(TpmBaseServices(Tpm(seed=9)))
    for t in (direct, proxy):
        t.pcr_extend(20, b"img", 2)
    assert direct.pcr_read(20) == proxy.pcr_read(20)
    assert direct.get_random(16) == proxy.get_random(16)
    a, b = direct.create_key(KeyKind.ATTESTATION), proxy.create_key(KeyKind.ATTESTATION)
    assert a == b
    assert direct.quote([20], b"n", a) == proxy.quote([20], b"n", b)
    assert direct.sign(b"m", a) == proxy.sign(b"m", b)


def test_seal_unseal_through_bytes(proxy):
    sk = proxy.create_key(KeyKind.STORAGE)
    blob = proxy.seal(b"payload", PcrPolicy.of({20: proxy.pcr_read(20)}), sk)
    assert proxy.unseal(blob, sk) == b"payload"
    proxy.pcr_extend(20, b"drift", 2)
    with pytest.raises(PolicyMismatch):
        proxy.unseal(blob, sk)
    proxy.reset_lockout(proxy.services.tpm.admin_token)


def test_client_flow_over_tbs():
    rig = Rig()
    rig.client = LmaClient(TbsTpm(TpmBaseServices(rig.tpm)))
    out, _ = rig.register()
    assert rig.client.counters.as_tuple() == (0, 0, 0, 0, 0)  # end_session starts a new flow
    rig.client.measure_software(IMAGE)
    login = rig.client.login(Pin("482916"), 2, rig.challenge("l"))
    assert rig.client.counters.as_tuple() == (0, 1, 2, 1, 3)
    assert verify_quote(login.quote, out.aik_public)
    assert rig.bank.verify_login(login.request, login.quote, "l").KIND == codec.MsgKind.GRANT
