import hashlib

import pytest

from attest_sim.bank_service import BankService
from attest_sim.channel import BankEndpoint, ChannelConfig
from attest_sim.codec import Credentials
from attest_sim.lma_client import LmaClient, Pin
from attest_sim.tpm_core import Tpm

IMAGE = b"banking-app build 7" + bytes(range(200))
TOKEN = b"T" * 32


def sha1(data: bytes) -> bytes:
    return hashlib.sha1(data).digest()


def oracle_extend(old: bytes, data: bytes, h=sha1) -> bytes:
    return h(old + h(data))


class Rig:
    """A bank, an in-process endpoint and one provisioned customer."""

    def __init__(self, seed=0, max_tries=5):
        self.bank = BankService(seed=f"{seed}:bank")
        self.endpoint = BankEndpoint(self.bank, TOKEN)
        self.cfg = ChannelConfig(TOKEN, endpoint=self.endpoint)
        self.secret = b"customer-secret!"
        self.creds = Credentials(b"alice0000001", hashlib.sha256(self.secret).digest())
        self.bank.open_account(self.creds.user_id, self.secret)
        self.key = self.bank.issue_activation_key(self.creds.user_id)
        self.pin = Pin("482916")
        self.tpm = Tpm(seed=f"{seed}:tpm", max_tries=max_tries)
        self.client = LmaClient(self.tpm)

    def challenge(self, session="s"):
        return self.bank.issue_challenge(session)

    def register(self):
        self.client.measure_software(IMAGE)
        nonce = self.challenge("reg")
        out = self.client.register(self.key, self.pin, self.creds, nonce)
        cert = self.bank.register_user(out.request, out.quote, out.aik_public, "reg")
        self.client.end_session()
        return out, cert


@pytest.fixture
def tpm():
    return Tpm(seed=1)


@pytest.fixture
def rig():
    return Rig()


@pytest.fixture
def registered():
    b = Rig()
    b.register()
    return b


_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
