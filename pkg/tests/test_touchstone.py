import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdnguard.netlist import make_decap_chain_board
from pdnguard.solver import BoardSignature, FrequencyGrid, SParamSweep, solve_z, z_to_s
from pdnguard.touchstone import (
    TouchstoneError,
    parse_touchstone,
    ports_from_filename,
    relative_error,
    write_touchstone,
)


def test_one_port_z_direct_read():
    doc = parse_touchstone("# HZ Z RI R 50\n1e6 1 0\n", filename="a.s1p")
    assert doc.parameter == "Z"
    sig = doc.to_signature()
    assert sig.freqs[0] == 1e6 and sig.z[0, 0, 0] == 1 + 0j


def test_matched_load_converts_to_z0():
    doc = parse_touchstone("# MHZ S MA R 50\n1 0 0\n2 0 90\n", filename="m.s1p")
    sig = doc.to_signature()
    np.testing.assert_allclose(sig.freqs, [1e6, 2e6])
    np.testing.assert_allclose(sig.z[:, 0, 0], 50)


def test_defaults_and_comments():
    text = "! measured on bench, IF bandwidth 10 kHz\n# \n1 0.5 0 ! trailing\n"
    doc = parse_touchstone(text, 1)
    assert (doc.unit, doc.parameter, doc.fmt, doc.z0) == ("GHZ", "S", "MA", 50.0)
    assert doc.freqs[0] == 1e9
    assert "IF bandwidth 10 kHz" in doc.comments[0]


def test_two_port_column_order():
    # 2-port rows are N11 N21 N12 N22
    doc = parse_touchstone("# HZ Z RI R 50\n1 11 0 21 0 12 0 22 0\n", filename="x.s2p")
    np.testing.assert_array_equal(doc.data[0].real, [[11, 12], [21, 22]])


def test_db_format():
    doc = parse_touchstone("# HZ S DB R 50\n1 -20 180\n", 1)
    assert doc.data[0, 0, 0] == pytest.approx(-0.1)


def test_three_port_wrapped_layout():
    sig = solve_z(make_decap_chain_board(port_indices=(1, 4, 6)), FrequencyGrid(points=4))
    text = write_touchstone(sig)
    data = [ln for ln in text.splitlines() if not ln.startswith(("!", "#"))]
    assert len(data) == 3 * 4
    assert len(data[0].split()) == 7 and len(data[1].split()) == 6
    back = parse_touchstone(text, filename="b.s3p")
    assert relative_error(back.data, sig.z) < 1e-8


def test_five_port_wraps_at_four_pairs():
    z = np.tile(np.arange(25, dtype=float).reshape(5, 5) + 1, (2, 1, 1))
    sig = BoardSignature([1e6, 2e6], z)
    data = [ln for ln in write_touchstone(sig).splitlines() if not ln.startswith(("!", "#"))]
    assert len(data) == 2 * 5 * 2
    back = parse_touchstone(write_touchstone(sig), 5)
    np.testing.assert_array_equal(back.data, z)


def test_writer_header_and_option_line():
    sig = BoardSignature([1e6, 2e6], np.ones((2, 1, 1)))
    text = write_touchstone(sig, header=["seed 42"])
    lines = text.splitlines()
    assert lines[0].startswith("! pdnguard") and "! provenance: simulated" in lines
    assert "! seed 42" in lines
    assert "# HZ Z RI R 50" in lines
    assert [ln for ln in lines if not ln.startswith(("!", "#"))] == ["1000000 1 0", "2000000 1 0"]


def test_nine_significant_digits():
    sig = BoardSignature([1e6], np.array([[[1 / 3]]]))
    row = write_touchstone(sig).splitlines()[-1]
    assert row.split()[1] == "0.333333333"


@pytest.mark.parametrize("text, n, line, msg", [
    ("# HZ Q RI R 50\n", 1, 1, "unknown token"),
    ("# HZ Y RI R 50\n1 0 0\n", 1, 1, "unsupported"),
    ("# HZ S RI R\n", 1, 1, "R needs"),
    ("# HZ S RI R 50\n2 0 0\n1 0 0\n", 1, 3, "strictly increasing"),
    ("# HZ S RI R 50\n1 0 0 0 0\n", 1, 2, "expected 2 values"),
    ("# HZ S RI R 50\n1 0 0 0 0 0 0\n", 2, 2, "expected 8 values"),
    ("[Version] 2.0\n# HZ S RI R 50\n", 1, 1, "v1.0 only"),
    ("# HZ S RI R 50\n1 a 0\n", 1, 2, "non-numeric"),
    ("1 0 0\n", 1, 1, "before option line"),
])
def test_parse_errors_carry_line_numbers(text, n, line, msg):
    with pytest.raises(TouchstoneError, match=msg) as exc:
        parse_touchstone(text, n)
    assert exc.value.line == line


def test_port_count_from_extension():
    assert ports_from_filename("board.S4P") == 4
    assert ports_from_filename("board.txt") is None


def _doc_text(rng, n, unit, fmt, param, freqs):
    # values printed at 9 significant digits, as the writer does
    lines = [f"# {unit} {param} {fmt} R 50"]
    for f in freqs:
        vals = []
        for _ in range(n * n):
            if fmt == "RI":
                vals += [rng.normal() * 10, rng.normal() * 10]
            elif fmt == "MA":
                vals += [rng.uniform(0.01, 5), rng.uniform(-179, 179)]
            else:
                vals += [rng.uniform(-60, 10), rng.uniform(-179, 179)]
        toks = [f"{v:.9g}" for v in vals]
        if n <= 2:
            lines.append(" ".join([f"{f:.9g}"] + toks))
        else:
            per = 2 * n
            for r in range(n):
                row = toks[r * per:(r + 1) * per]
                for k in range(0, per, 8):
                    chunk = " ".join(row[k:k + 8])
                    lines.append(f"{f:.9g} {chunk}" if r == 0 and k == 0 else chunk)
    return "\n".join(lines) + "\n"


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.sampled_from(["HZ", "KHZ", "MHZ", "GHZ"]),
       st.sampled_from(["RI", "MA", "DB"]), st.sampled_from(["S", "Z"]), st.integers(0, 2**32 - 1))
def test_document_roundtrip(n, unit, fmt, param, seed):
    rng = np.random.default_rng(seed)
    freqs = np.cumsum(rng.uniform(0.1, 10, int(rng.integers(1, 6))))
    doc = parse_touchstone(_doc_text(rng, n, unit, fmt, param, freqs), n)
    obj = doc.to_signature() if param == "Z" else doc.to_sweep()
    if param == "Z":
        obj.provenance = "measured"
    text = write_touchstone(obj, unit=unit, fmt=fmt)
    back = parse_touchstone(text, n)
    assert back.parameter == param
    np.testing.assert_allclose(back.freqs, doc.freqs, rtol=1e-9)
    assert relative_error(back.data, doc.data) < 1e-9


def test_s_sweep_written_and_reread():
    sig = solve_z(make_decap_chain_board(port_indices=(1, 6)), FrequencyGrid(points=32))
    sweep = z_to_s(sig)
    text = write_touchstone(sweep, unit="GHZ", fmt="DB")
    assert "# GHZ S DB R 50" in text
    back = parse_touchstone(text, filename="s.s2p")
    assert relative_error(back.data, sweep.s) < 1e-8


def test_writer_rejects_mixed_reference():
    sweep = SParamSweep([1e6], np.zeros((1, 2, 2)), [50, 75])
    with pytest.raises(ValueError):
        write_touchstone(sweep)
