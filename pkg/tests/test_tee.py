"""Simulated TEE: chip endorsement key derivation, vendor chain, launch
measurement, guest report generation and verification.

The launch measurement expectation for all-zero component digests was
computed with a standalone digest over the concatenated components and
frozen here first.
"""

import pytest

from ccxtrust import crypto, tee
from ccxtrust.errors import EvidenceTooLarge, InvalidLength

CHIP = crypto.sha256(b"chip-0")
ZERO_TCB = tee.TeeTcb(bytes(32), bytes(32), bytes(32), bytes(32))


def make_vendor() -> tee.TeeVendor:
    return tee.TeeVendor(b"vendor-seed-material")


def sample_tcb() -> tee.TeeTcb:
    return tee.TeeTcb(crypto.sha256(b"ovmf"), crypto.sha256(b"kernel"),
                      crypto.sha256(b"initrd"), crypto.sha256(b"cmdline"))


# ---------------------------------------------------------------------------
# launch measurement
# ---------------------------------------------------------------------------

def test_launch_measure_frozen_vector():
    assert tee.launch_measure(ZERO_TCB).hex() == (
        "38723a2e5e8a17aa7950dc008209944e898f69a7bd10a23c839d341e935fd5ca")


def test_launch_measure_sensitive_to_every_component():
    base = tee.launch_measure(sample_tcb())
    for field in ("ovmf", "kernel", "initrd", "cmdline"):
        kwargs = {"ovmf": crypto.sha256(b"ovmf"),
                  "kernel": crypto.sha256(b"kernel"),
                  "initrd": crypto.sha256(b"initrd"),
                  "cmdline": crypto.sha256(b"cmdline")}
        kwargs[field] = crypto.sha256(b"tampered")
        assert tee.launch_measure(tee.TeeTcb(**kwargs)) != base


def test_tcb_component_width_enforced():
    with pytest.raises(InvalidLength):
        tee.TeeTcb(b"short", bytes(32), bytes(32), bytes(32))


# ---------------------------------------------------------------------------
# vendor and chip endorsement keys
# ---------------------------------------------------------------------------

def test_vcek_derivation_deterministic_per_chip_and_tcb():
    vendor = make_vendor()
    k1, _ = vendor.derive_vcek(CHIP, 7)
    k2, _ = vendor.derive_vcek(CHIP, 7)
    k3, _ = vendor.derive_vcek(CHIP, 8)
    k4, _ = vendor.derive_vcek(crypto.sha256(b"chip-1"), 7)
    assert k1.public_bytes == k2.public_bytes
    assert k1.public_bytes != k3.public_bytes
    assert k1.public_bytes != k4.public_bytes


def test_vendor_chain_verifies_against_root():
    vendor = make_vendor()
    vcek, chain = vendor.derive_vcek(CHIP, 7)
    assert chain.verify(vendor.root_pub)
    assert chain.vcek.subject == vcek.public_bytes
    assert not chain.verify(make_vendor_other().root_pub)


def make_vendor_other() -> tee.TeeVendor:
    return tee.TeeVendor(b"some-other-vendor-seed")


def test_chain_round_trip_encoding():
    vendor = make_vendor()
    _, chain = vendor.derive_vcek(CHIP, 7)
    assert tee.CertChain.from_bytes(chain.to_bytes()) == chain


def test_spliced_chain_rejected():
    vendor = make_vendor()
    other = make_vendor_other()
    _, chain = vendor.derive_vcek(CHIP, 7)
    _, foreign = other.derive_vcek(CHIP, 7)
    spliced = tee.CertChain(chain.ark, chain.ask, foreign.vcek)
    assert not spliced.verify(vendor.root_pub)


# ---------------------------------------------------------------------------
# guest reports
# ---------------------------------------------------------------------------

def test_guest_report_round_trip_and_verify():
    vendor = make_vendor()
    vcek, chain = vendor.derive_vcek(CHIP, 7)
    data = crypto.sha256(b"nonce") + bytes(32)
    report = tee.guest_report(vcek, CHIP, sample_tcb(), 7, data,
                              embedded_evidence=b"inner")
    assert report.chip_id == CHIP
    assert report.tcb_version == 7
    assert report.launch_measurement == tee.launch_measure(sample_tcb())

    parsed = tee.TeeReport.from_bytes(report.to_bytes())
    assert parsed == report
    check = tee.verify_report(parsed, chain, vendor.root_pub,
                              expected_measurement=report.launch_measurement,
                              expected_report_data=data)
    assert check is tee.ReportCheck.OK


def test_verify_report_layer_ordering():
    vendor = make_vendor()
    other = make_vendor_other()
    vcek, chain = vendor.derive_vcek(CHIP, 7)
    data = crypto.sha256(b"nonce") + bytes(32)
    report = tee.guest_report(vcek, CHIP, sample_tcb(), 7, data)

    # chain failure reported before anything else
    _, foreign_chain = other.derive_vcek(CHIP, 7)
    assert tee.verify_report(report, foreign_chain, vendor.root_pub) is \
        tee.ReportCheck.CHAIN_INVALID

    # valid chain, wrong signer
    foreign_key, _ = other.derive_vcek(CHIP, 7)
    forged = tee.guest_report(foreign_key, CHIP, sample_tcb(), 7, data)
    assert tee.verify_report(forged, chain, vendor.root_pub) is \
        tee.ReportCheck.SIGNATURE_INVALID

    # measurement checked before report_data
    assert tee.verify_report(
        report, chain, vendor.root_pub,
        expected_measurement=bytes(32),
        expected_report_data=bytes(64)) is tee.ReportCheck.MEASUREMENT_MISMATCH
    assert tee.verify_report(
        report, chain, vendor.root_pub,
        expected_measurement=report.launch_measurement,
        expected_report_data=bytes(64)) is tee.ReportCheck.NONCE_MISMATCH


def test_report_tamper_breaks_signature():
    import dataclasses
    vendor = make_vendor()
    vcek, chain = vendor.derive_vcek(CHIP, 7)
    data = crypto.sha256(b"n") + bytes(32)
    report = tee.guest_report(vcek, CHIP, sample_tcb(), 7, data, b"evidence")
    for change in (
        {"tcb_version": 8},
        {"report_data": bytes(64)},
        {"embedded_evidence": b"evidence!"},
        {"launch_measurement": bytes(32)},
    ):
        forged = dataclasses.replace(report, **change)
        assert tee.verify_report(forged, chain, vendor.root_pub) is \
            tee.ReportCheck.SIGNATURE_INVALID


def test_report_data_width_enforced():
    vendor = make_vendor()
    vcek, _ = vendor.derive_vcek(CHIP, 7)
    with pytest.raises(InvalidLength):
        tee.guest_report(vcek, CHIP, sample_tcb(), 7, b"short")


def test_embedded_evidence_size_cap():
    vendor = make_vendor()
    vcek, _ = vendor.derive_vcek(CHIP, 7)
    data = bytes(64)
    report = tee.guest_report(vcek, CHIP, sample_tcb(), 7, data,
                              b"\x01" * tee.MAX_EVIDENCE_SIZE)
    assert len(report.embedded_evidence) == tee.MAX_EVIDENCE_SIZE
    with pytest.raises(EvidenceTooLarge):
        tee.guest_report(vcek, CHIP, sample_tcb(), 7, data,
                         b"\x01" * (tee.MAX_EVIDENCE_SIZE + 1))
