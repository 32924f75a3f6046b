"""Exception hierarchy shared across the simulator.

TPM errors carry a ``code`` so they survive the binary command interface
(the response header's return code) and can be re-raised on the caller side.
"""


class AttestSimError(Exception):
    """Base class for every error raised by this package."""


# --- TPM -------------------------------------------------------------------


class TpmError(AttestSimError):
    code = 0x900


class BadIndex(TpmError):
    code = 0x901


class LocalityDenied(TpmError):
    code = 0x902


class UnsupportedLocality(TpmError):
    code = 0x903


class StaticPcr(TpmError):
    code = 0x904


class WrongKeyKind(TpmError):
    code = 0x905


class UnknownKey(TpmError):
    code = 0x906


class PolicyMismatch(TpmError):
    code = 0x907


class ForeignTpm(TpmError):
    code = 0x908


class WrongKey(TpmError):
    code = 0x909


class Lockout(TpmError):
    code = 0x90A


class EmptySelection(TpmError):
    code = 0x90B


class BadAuthorization(TpmError):
    code = 0x90C


class BlobIntegrity(TpmError):
    """Sealed blob failed authenticated decryption (tampered ciphertext or metadata)."""

    code = 0x90D


class BadParameter(TpmError):
    code = 0x90E


TPM_ERRORS: dict[int, type[TpmError]] = {
    cls.code: cls
    for cls in (
        TpmError,
        BadIndex,
        LocalityDenied,
        UnsupportedLocality,
        StaticPcr,
        WrongKeyKind,
        UnknownKey,
        PolicyMismatch,
        ForeignTpm,
        WrongKey,
        Lockout,
        EmptySelection,
        BadAuthorization,
        BlobIntegrity,
        BadParameter,
    )
}


# --- codec -----------------------------------------------------------------


class CodecError(AttestSimError, ValueError):
    pass


class Truncated(CodecError):
    pass


class SizeMismatch(CodecError):
    pass


class UnknownCode(CodecError):
    pass


class TrailingBytes(CodecError):
    pass


class WrongLength(CodecError):
    pass


class Malformed(CodecError):
    """A field holds a value outside its domain (bad enum, unsorted selection, ...)."""


# --- client ----------------------------------------------------------------


class ClientError(AttestSimError):
    pass


class AlreadyRegistered(ClientError):
    pass


class NotRegistered(ClientError):
    pass


class WrongPin(ClientError):
    pass


class ProtocolError(ClientError):
    """The peer sent a message that does not fit the current exchange."""


# --- channel ---------------------------------------------------------------


class ChannelError(AttestSimError):
    pass


class ServerAuthFailed(ChannelError):
    pass


class Unreachable(ChannelError):
    pass


class Closed(ChannelError):
    pass


# --- harness ---------------------------------------------------------------


class HarnessError(AttestSimError):
    pass


class UnknownScenario(HarnessError):
    pass


class ExpectationFailed(HarnessError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NoData(HarnessError):
    pass


class UnknownOp(HarnessError):
    pass


class StoreError(HarnessError):
    pass


class BadMagic(StoreError):
    pass


class BadVersion(StoreError):
    pass


class Corrupt(StoreError):
    pass
