"""Simulated confidential-VM TEE engine.

Models the attestation-relevant surface of an SEV-SNP style platform: a
vendor root of trust (ARK -> ASK -> VCEK certificate chain), a per-chip
endorsement key derived from the vendor secret and the TCB version, a
launch measurement over the guest TCB components, and signed guest
reports that can carry a nonce binding plus embedded foreign evidence.

No enclave isolation is simulated, only the evidence formats and their
verification rules.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

from . import crypto
from .encoding import FieldReader, FieldWriter
from .errors import DecodeError, EvidenceTooLarge, InvalidLength

MAX_EVIDENCE_SIZE = 4096
REPORT_DATA_LEN = 64
REPORT_VERSION = 1

CHIP_ID_LEN = 32


# ---------------------------------------------------------------------------
# guest TCB and launch measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TeeTcb:
    """Digests of the four measured guest components."""

    ovmf: bytes
    kernel: bytes
    initrd: bytes
    cmdline: bytes

    def __post_init__(self) -> None:
        for part in (self.ovmf, self.kernel, self.initrd, self.cmdline):
            if len(part) != crypto.DIGEST_LEN:
                raise InvalidLength("TCB component digests must be 32 bytes")


def launch_measure(tcb: TeeTcb) -> bytes:
    """Launch measurement: digest over the concatenated component digests."""
    return crypto.sha256(tcb.ovmf + tcb.kernel + tcb.initrd + tcb.cmdline)


# ---------------------------------------------------------------------------
# vendor root of trust and VCEK derivation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CertChain:
    """ARK (self-signed) -> ASK -> VCEK."""

    ark: crypto.Certificate
    ask: crypto.Certificate
    vcek: crypto.Certificate

    def verify(self, trusted_ark_pub: bytes) -> bool:
        ok = (
            self.ark.role == "ARK"
            and self.ark.subject == trusted_ark_pub
            and self.ark.verify(trusted_ark_pub)
            and self.ask.role == "ASK"
            and self.ask.verify(self.ark.subject)
            and self.vcek.role == "VCEK"
            and self.vcek.verify(self.ask.subject)
        )
        return ok

    def to_bytes(self) -> bytes:
        w = FieldWriter()
        for tag, cert in ((1, self.ark), (2, self.ask), (3, self.vcek)):
            w.put(tag, cert.to_bytes())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CertChain":
        r = FieldReader(raw)
        ark = crypto.Certificate.from_bytes(r.take(1))
        ask = crypto.Certificate.from_bytes(r.take(2))
        vcek = crypto.Certificate.from_bytes(r.take(3))
        r.finish()
        return cls(ark, ask, vcek)


class TeeVendor:
    """Simulated silicon vendor: holds the ARK/ASK and the device secret
    every chip endorsement key is derived from."""

    def __init__(self, seed: bytes) -> None:
        if len(seed) < 16:
            raise InvalidLength("vendor seed must be at least 16 bytes")
        self._ark = crypto.SigningKeyPair.from_seed(
            "ARK", crypto.kdf_counter(crypto.sha256(seed), "VENDOR-ARK"))
        self._ask = crypto.SigningKeyPair.from_seed(
            "ASK", crypto.kdf_counter(crypto.sha256(seed), "VENDOR-ASK"))
        self._device_secret = crypto.kdf_counter(crypto.sha256(seed), "VENDOR-DEVICE")
        self.ark_cert = crypto.issue_certificate(self._ark, "ARK", 1, self._ark.public_bytes)
        self.ask_cert = crypto.issue_certificate(self._ark, "ASK", 2, self._ask.public_bytes)

    @property
    def root_pub(self) -> bytes:
        return self._ark.public_bytes

    def derive_vcek(self, chip_id: bytes, tcb_version: int):
        """Chip endorsement key for (chip_id, tcb_version).

        The derivation is a pure function of the vendor secret and both
        inputs, so the same chip at the same TCB level always gets the
        same key, and a TCB update rolls the key.
        """
        if len(chip_id) != CHIP_ID_LEN:
            raise InvalidLength("chip id must be 32 bytes")
        if tcb_version < 0:
            raise InvalidLength("tcb version must be non-negative")
        material = crypto.kdf_counter(
            self._device_secret, "VCEK", chip_id + struct.pack("<Q", tcb_version))
        vcek = crypto.SigningKeyPair.from_seed("VCEK", material)
        serial = struct.unpack(
            "<Q", crypto.sha256(b"vcek-serial:" + chip_id
                                + struct.pack("<Q", tcb_version))[:8])[0]
        cert = crypto.issue_certificate(self._ask, "VCEK", serial, vcek.public_bytes)
        return vcek, CertChain(self.ark_cert, self.ask_cert, cert)


# ---------------------------------------------------------------------------
# guest reports
# ---------------------------------------------------------------------------

_RT_VERSION, _RT_CHIP, _RT_TCBV, _RT_MEASURE, _RT_DATA, _RT_EVIDENCE, _RT_SIG = \
    1, 2, 3, 4, 5, 6, 7


@dataclass(frozen=True)
class TeeReport:
    """Signed guest attestation report.

    report_data is caller-controlled 64-byte binding space (nonce and
    evidence digest live there); embedded_evidence carries at most
    MAX_EVIDENCE_SIZE bytes of foreign evidence verbatim. The signature
    covers every field above it.
    """

    version: int
    chip_id: bytes
    tcb_version: int
    launch_measurement: bytes
    report_data: bytes
    embedded_evidence: bytes
    signature: bytes

    def body_bytes(self) -> bytes:
        w = FieldWriter()
        w.put_u16(_RT_VERSION, self.version)
        w.put(_RT_CHIP, self.chip_id)
        w.put_u64(_RT_TCBV, self.tcb_version)
        w.put(_RT_MEASURE, self.launch_measurement)
        w.put(_RT_DATA, self.report_data)
        w.put(_RT_EVIDENCE, self.embedded_evidence)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.body_bytes() + FieldWriter().put(_RT_SIG, self.signature).getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TeeReport":
        r = FieldReader(raw)
        version = r.take_u16(_RT_VERSION)
        chip_id = r.take(_RT_CHIP)
        tcb_version = r.take_u64(_RT_TCBV)
        measurement = r.take(_RT_MEASURE)
        data = r.take(_RT_DATA)
        evidence = r.take(_RT_EVIDENCE)
        sig = r.take(_RT_SIG)
        r.finish()
        if len(chip_id) != CHIP_ID_LEN or len(measurement) != crypto.DIGEST_LEN:
            raise DecodeError("report identity fields have wrong width")
        if len(data) != REPORT_DATA_LEN:
            raise DecodeError("report_data must be 64 bytes")
        if len(evidence) > MAX_EVIDENCE_SIZE:
            raise DecodeError("embedded evidence exceeds the format limit")
        return cls(version, chip_id, tcb_version, measurement, data, evidence, sig)

    @property
    def digest(self) -> bytes:
        return crypto.sha256(self.to_bytes())


def guest_report(vcek: crypto.SigningKeyPair, chip_id: bytes, tcb: TeeTcb,
                 tcb_version: int, report_data: bytes,
                 embedded_evidence: bytes = b"") -> TeeReport:
    """Produce a signed guest report for the current launch state."""
    if len(report_data) != REPORT_DATA_LEN:
        raise InvalidLength(f"report_data must be exactly {REPORT_DATA_LEN} bytes")
    if len(embedded_evidence) > MAX_EVIDENCE_SIZE:
        raise EvidenceTooLarge(
            f"evidence is {len(embedded_evidence)} bytes, limit {MAX_EVIDENCE_SIZE}")
    if len(chip_id) != CHIP_ID_LEN:
        raise InvalidLength("chip id must be 32 bytes")
    unsigned = TeeReport(REPORT_VERSION, chip_id, tcb_version, launch_measure(tcb),
                         report_data, embedded_evidence, b"")
    sig = vcek.sign(unsigned.body_bytes())
    return TeeReport(unsigned.version, unsigned.chip_id, unsigned.tcb_version,
                     unsigned.launch_measurement, unsigned.report_data,
                     unsigned.embedded_evidence, sig)


class ReportCheck(Enum):
    OK = "ok"
    CHAIN_INVALID = "chain-invalid"
    SIGNATURE_INVALID = "signature-invalid"
    MEASUREMENT_MISMATCH = "measurement-mismatch"
    NONCE_MISMATCH = "nonce-mismatch"


def verify_report(report: TeeReport, chain: CertChain, trusted_ark_pub: bytes,
                  expected_measurement: bytes | None = None,
                  expected_report_data: bytes | None = None) -> ReportCheck:
    """Check a guest report bottom-up; the first failing layer is reported.

    Chain first (nothing below matters without it), then the report
    signature under the chain's VCEK, then the launch measurement, then
    the report_data binding when the caller supplies an expectation.
    """
    if not chain.verify(trusted_ark_pub):
        return ReportCheck.CHAIN_INVALID
    if not crypto.verify(chain.vcek.subject, report.body_bytes(), report.signature):
        return ReportCheck.SIGNATURE_INVALID
    if expected_measurement is not None and report.launch_measurement != expected_measurement:
        return ReportCheck.MEASUREMENT_MISMATCH
    if expected_report_data is not None and report.report_data != expected_report_data:
        return ReportCheck.NONCE_MISMATCH
    return ReportCheck.OK
