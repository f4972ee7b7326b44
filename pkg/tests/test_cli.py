import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointring import cli, results
from pointring.config import COMMANDS, RunConfig, parse_config, validate, with_overrides
from pointring.errors import ParseError, ValidationError
from pointring.experiments import SweepResult, DerivativeTable
from pointring.krein import RingSpec, sector_roots
from pointring.states import GridSpec, current_grid, sector_state

MINIMAL = "np=12\nradius=1\nalpha=-1\nb_from=0.5\nb_to=2.0\nsteps=61\n"


# -- configuration ----------------------------------------------------------

def test_minimal_b_sweep_config_fills_defaults():
    cfg = parse_config(MINIMAL, "b-sweep")
    assert (cfg.n_points, cfg.radius, cfg.alpha, cfg.b_from, cfg.b_to, cfg.steps) == (12, 1.0, -1.0, 0.5, 2.0, 61)
    assert cfg.n_lowest == RunConfig().n_lowest and cfg.root_tol == 1e-10


def test_invalid_point_count_names_field():
    with pytest.raises(ValidationError) as exc:
        parse_config("np=0\n")
    assert exc.value.field == "n_points"


def test_unknown_key_refused():
    with pytest.raises(ParseError) as exc:
        parse_config("np=12\ncolour=red\n")
    assert exc.value.line == 2


def test_sectioned_file_and_comments():
    cfg = parse_config("# ring\n[geometry]\nn_points = 6  # six\n[field]\nb = 0.5\n", "current-field")
    assert cfg.n_points == 6 and cfg.b == 0.5 and cfg.command == "current-field"


@pytest.mark.parametrize("text", ["np=3\nn_points=4\n", "[nowhere]\nx=1\n", "np=three\n",
                                  "steps\n", "[geometry]\npositions = 0 0; 1\ncouplings = -1\n"])
def test_malformed_files(text):
    with pytest.raises((ParseError, ValidationError)):
        parse_config(text)


def test_command_mismatch():
    with pytest.raises(ValidationError):
        parse_config("command = disorder\n", "b-sweep")


def test_explicit_points():
    cfg = parse_config("[geometry]\npositions = 0 0; 1 0.5\ncouplings = -1, -0.5\n")
    assert cfg.explicit_points and cfg.positions == ((0.0, 0.0), (1.0, 0.5))
    with pytest.raises(ValidationError):
        parse_config("[geometry]\npositions = 0 0; 0 0\ncouplings = -1, -1\n")


finite = st.floats(-5, 5, allow_nan=False).filter(lambda v: v != 0)


@given(st.sampled_from(COMMANDS), st.integers(1, 40), st.floats(0.1, 4), finite,
       st.floats(0.1, 1.0), st.integers(8, 100), st.one_of(st.none(), st.floats(-10, 10)),
       st.one_of(st.none(), st.integers(0, 0)), st.integers(0, 2 ** 64 - 1), st.booleans())
def test_serialize_round_trip(command, n, radius, alpha, b_from, steps, z_hi, sector, seed, sweep):
    cfg = validate(RunConfig(command=command, n_points=n, radius=radius, alpha=alpha,
                             b_from=b_from, steps=steps, z_hi=z_hi, sector=sector,
                             base_seed=seed, with_sweep=sweep))
    back = parse_config(cfg.serialize())
    assert back == cfg and back.digest() == cfg.digest()


def test_round_trip_with_points_and_override():
    cfg = parse_config("[geometry]\npositions = 0.1 0; -0.3 0.7\ncouplings = -1, 0.25\n")
    assert parse_config(cfg.serialize()) == cfg
    assert with_overrides(cfg, base_seed=9).base_seed == 9
    with pytest.raises(ValidationError):
        with_overrides(cfg, base_seed=-1)


# -- result files -----------------------------------------------------------

def test_empty_spectrum_is_header_only():
    text = results.render_spectrum(SweepResult("B", np.array([]), []), "abc")
    lines = text.splitlines()
    assert lines[-1] == ",".join(results.SPECTRUM_COLUMNS)
    assert results.body(text) == lines[-1] + "\n"


def test_derivative_file_schema():
    table = DerivativeTable(0.1, {0: (np.array([1.0]), np.array([2.0]), np.array([3.0]))}, {0: (1e-6, 2e-6)})
    text = results.render_derivatives(table, "d")
    assert "B,branch_id,dE_dB,d2E_dB2\n1,0,2,3\n" in text


def test_float_format():
    assert results.fmt(0.1) == "0.10000000000000001"
    assert results.fmt(None) == "" and results.fmt(3) == "3" and results.fmt(True) == "1"


def test_current_field_file():
    spec = RingSpec(12, 1.0, -1.0)
    z0 = sector_roots(spec, 1.0, gap_index=1)[0]
    fld = current_grid(sector_state(spec, 1.0, z0, 0), GridSpec(-2.0, -2.0, 0.02, 201, 201))
    text = results.render_current_field(fld, "x", 0.25)
    body = results.body(text).splitlines()
    assert len(body) == 1 + 40401
    assert "# circulation_R = 0.25" in text
    masked = [row for row in body[1:] if row.endswith(",1")]
    assert len(masked) == int(fld.mask.sum()) > 0
    assert all(row.split(",")[2:5] == ["0", "0", "0"] for row in masked)


def test_atomic_write(tmp_path):
    target = tmp_path / "deep" / "out.csv"
    results.write_atomic(target, "a\n")
    assert target.read_text() == "a\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.csv"]


# -- command line -----------------------------------------------------------

def run(tmp_path, command, text, *extra, out="out"):
    cfg = tmp_path / f"{command}.ini"
    cfg.write_text(text)
    target = tmp_path / out
    code = cli.main([command, "--config", str(cfg), "--out", str(target), *extra])
    files = {p.name: p.read_bytes() for p in target.iterdir()} if target.exists() else {}
    return code, files


def test_config_error_exit_code_and_no_output(tmp_path, capsys):
    code, files = run(tmp_path, "b-sweep", "np=0\n")
    assert code == 2 and files == {}
    assert "ValidationError" in capsys.readouterr().err
    code, files = run(tmp_path, "b-sweep", "colour=red\n")
    assert code == 2 and files == {}
    assert "ParseError" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["b-sweep", "--config", str(tmp_path / "nope.ini")]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_numerical_error_exit_code(tmp_path, capsys):
    # three symmetric points share one degenerate lowest level: no basis-free current
    text = "[geometry]\npositions = 1 0; -0.5 0.8660254037844386; -0.5 -0.8660254037844386\ncouplings = -1, -1, -1\n"
    code, files = run(tmp_path, "current-field", text)
    assert code == 3 and files == {}
    assert "NumericalError" in capsys.readouterr().err


def test_single_point_check(tmp_path):
    code, files = run(tmp_path, "single-point-check", "np=6\nalpha=-1\nb=1\nz_hi=3\n")
    assert code == 0
    rows = results.body(files["roots.csv"].decode()).splitlines()
    assert rows[0] == "gap,z0,multiplicity,residual,bc_residual"
    assert sum(int(r.split(",")[2]) for r in rows[1:]) <= 12
    assert all(float(r.split(",")[4]) <= 1e-4 for r in rows[1:] if r.split(",")[4])


def test_b_sweep_reruns_are_byte_identical(tmp_path):
    text = "np=6\nb_from=0.5\nb_to=2\nsteps=8\n"
    code1, first = run(tmp_path, "b-sweep", text, out="a")
    code2, second = run(tmp_path, "b-sweep", text, out="b")
    assert code1 == code2 == 0
    assert set(first) == {"spectrum.csv", "derivatives.csv"}
    assert first == second


def test_disorder_thread_count_does_not_change_output(tmp_path):
    text = "np=6\nn_seeds=3\nsteps=8\ndelta_alpha=0.02\nbase_seed=5\n"
    code1, serial = run(tmp_path, "disorder", text, "--threads", "1", out="a")
    code2, parallel = run(tmp_path, "disorder", text, "--threads", "2", out="b")
    assert code1 == code2 == 0
    assert serial == parallel
    assert {"disorder_runs.csv", "disorder_couplings.csv", "spectrum_run000.csv"} <= set(serial)
    code3, reseeded = run(tmp_path, "disorder", text, "--seed", "6", out="c")
    assert code3 == 0 and reseeded["disorder_couplings.csv"] != serial["disorder_couplings.csv"]
