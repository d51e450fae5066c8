import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entlink.eventio import (
    CSV_HEADER,
    HEADER,
    RECORD_DTYPE,
    format_ps_as_ns,
    read_binary,
    read_csv,
    to_csv_string,
    write_binary,
    write_csv,
    write_json,
)
from entlink.linksim import LinkConfig, simulate_run


@pytest.fixture(scope="module")
def sim():
    return simulate_run(LinkConfig(duration=0.05, seed=4, background_rate_alice=2000,
                                   background_rate_bob=2000))


@given(st.integers(-10**15, 10**15))
def test_ns_formatting_is_exact(ps):
    text = format_ps_as_ns(ps)
    whole, frac = text.lstrip("-").split(".")
    back = int(whole) * 1000 + int(frac)
    assert (-back if text.startswith("-") else back) == ps


def test_csv_roundtrip(sim, tmp_path):
    path = tmp_path / "ev.csv"
    write_csv((sim.alice, sim.bob), path)
    rec = read_csv(path)
    assert rec.size == len(sim.alice) + len(sim.bob)
    n = len(sim.alice)
    assert np.array_equal(rec["time_ps"][:n], sim.alice.time_ps)
    assert np.array_equal(rec["offset_ps"][n:], sim.bob.offset_ps)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)


def test_csv_string_matches_file(sim, tmp_path):
    path = tmp_path / "ev.csv"
    write_csv((sim.alice, sim.bob), path)
    assert to_csv_string((sim.alice, sim.bob)) == path.read_text()


def test_binary_roundtrip(sim, tmp_path):
    path = tmp_path / "ev.bin"
    write_binary((sim.alice, sim.bob), path)
    rec, period = read_binary(path)
    assert period == sim.alice.period_ps
    assert path.stat().st_size == HEADER.size + rec.size * RECORD_DTYPE.itemsize
    assert RECORD_DTYPE.itemsize == 26 and HEADER.size == 32
    assert np.array_equal(rec["detector"][len(sim.alice):], sim.bob.detector)


def test_binary_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"\0" * 64)
    with pytest.raises(ValueError):
        read_binary(path)


def test_json_export(sim, tmp_path):
    import json

    path = tmp_path / "ev.json"
    write_json((sim.alice, sim.bob), path)
    data = json.loads(path.read_text())
    assert data[0]["receiver"] == "alice"
    assert data[0]["time_ps"] == int(sim.alice.time_ps[0])
    assert len(data) == len(sim.alice) + len(sim.bob)


def test_csv_header_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_csv(path)
