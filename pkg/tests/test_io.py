import math
import struct

import numpy as np
import pytest

from viscda.forcing import PRNG_ALGORITHM, ForcingSpec, generate_forcing
from viscda.grid import Grid2D
from viscda.io import (FormatError, ObservationStream, ObservationWriter, decode_snapshot, encode_snapshot,
                       read_csv, read_forcing, read_observations, read_snapshot, write_csv, write_forcing,
                       write_snapshot)

from conftest import random_field


def test_snapshot_round_trip_bit_exact(tmp_path, rng):
    g = Grid2D(32)
    u = random_field(g, rng)
    p = tmp_path / "u.nnse"
    write_snapshot(p, u, 12.345)
    s = read_snapshot(p)
    assert s.t == 12.345
    assert s.field.grid == g
    assert s.field.divergence_free
    assert np.array_equal(s.field.coeffs, u.coeffs)
    assert encode_snapshot(s.field, s.t) == p.read_bytes()


def test_snapshot_header_layout(rng):
    g = Grid2D(8)
    u = random_field(g, rng)
    data = encode_snapshot(u, 1.5)
    magic, n, num, den, length, t, flags = struct.unpack_from("<5sIIIddB", data)
    assert (magic, n, num, den, t, flags) == (b"NNSE1", 8, 3, 2, 1.5, 1)
    assert length == 2 * math.pi
    assert len(data) == struct.calcsize("<5sIIIddB") + 2 * 8 * 8 * 16


def test_forcing_file(tmp_path):
    g = Grid2D(32)
    spec = ForcingSpec(3, 5, seed=9)
    f = generate_forcing(spec, g)
    p = tmp_path / "f.nnse"
    write_forcing(p, f, spec)
    assert PRNG_ALGORITHM.encode() in p.read_bytes()
    assert np.array_equal(read_forcing(p).coeffs, f.coeffs)
    snap = read_snapshot(p)
    assert snap.forcing == spec


def test_bad_magic():
    with pytest.raises(FormatError):
        decode_snapshot(b"XXXXX" + bytes(64))


def test_observation_stream_round_trip(tmp_path, rng):
    g = Grid2D(32)
    h = 1 / 4
    states = [random_field(g, rng).coeffs for _ in range(3)]
    times = [0.0, 0.5, 1.0]
    p = tmp_path / "o.nnob"
    with ObservationWriter(p, g, h, "run-x") as w:
        for t, s in zip(times, states):
            w.append(t, s)
    obs = read_observations(p)
    assert obs.run_id == "run-x"
    assert obs.h == h
    assert np.array_equal(obs.times, times)
    ref = ObservationStream.from_states(g, h, times, states)
    assert np.array_equal(obs.values, ref.values)
    keep = g.kmag <= 4
    assert np.array_equal(obs.expand(1), states[1] * (keep & g.mask))
    # zero-order hold
    assert obs.index_at(0.7) == 1
    assert obs.index_at(0.5) == 1
    with pytest.raises(KeyError):
        obs.index_at(-0.1)


def test_csv_round_trip(tmp_path):
    p = tmp_path / "x.csv"
    vals = [(0.1, 1 / 3, None), (2.0, math.nan, 1e-300)]
    write_csv(p, ("a", "b", "c"), vals)
    header, rows = read_csv(p)
    assert header == ["a", "b", "c"]
    assert rows[0]["b"] == 1 / 3
    assert rows[0]["c"] is None and rows[1]["b"] is None
    assert rows[1]["c"] == 1e-300
    assert p.read_text().splitlines()[1] == "0.10000000000000001,0.33333333333333331,"
