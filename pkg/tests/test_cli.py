import textwrap

import pytest

from confsat import cli
from confsat.config import (KNOWN_CHECKS, ConfigError, bundled_scenarios, load_bundled,
                            parse_scenario)

SMALL = textwrap.dedent("""\
    name: tiny-torus
    description: flat torus, closed problem
    manifold:
      dim: 3
      lower: [0, 0, 0]
      upper: [1, 1, 1]
      shape: [8, 8, 8]
      periodic: [true, true, true]
      formula: flat
    s: closed
    checks: [identity, bounds, rayleigh]
    options:
      rayleigh: {count: 6}
    """)


def test_bundled_scenarios_parse():
    names = bundled_scenarios()
    assert {"flat-slab-s0", "bump-seq-s1", "dense-oracle-8"} <= set(names)
    for n in names:
        scn = load_bundled(n)
        assert scn.description
        assert set(scn.checks) <= set(KNOWN_CHECKS)


def test_missing_dim_names_field_and_line():
    text = SMALL.replace("  dim: 3\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text)
    assert exc.value.field == "manifold.dim"
    assert exc.value.line == 3


def test_unknown_check_and_bad_mode():
    with pytest.raises(ConfigError) as exc:
        parse_scenario(SMALL.replace("checks: [identity", "checks: [wat"))
    assert exc.value.field == "checks" and exc.value.line == 11
    with pytest.raises(ConfigError) as exc:
        parse_scenario(SMALL.replace("s: closed", "s: 2"))
    assert exc.value.field == "s"


def test_wrong_length_list():
    with pytest.raises(ConfigError) as exc:
        parse_scenario(SMALL.replace("shape: [8, 8, 8]", "shape: [8, 8]"))
    assert exc.value.field == "manifold.shape" and exc.value.line == 7


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_scenario("name: x\nmanifold: [unclosed\n")
    assert exc.value.line is not None


def test_list_and_describe(capsys):
    assert cli.main(["list"]) == 0
    assert "flat-slab-s0" in capsys.readouterr().out.split()
    assert cli.main(["describe", "bump-slab-s1"]) == 0
    out = capsys.readouterr().out
    assert "bump-slab-s1" in out and "h~ = 0" in out


def test_describe_unknown_suggests_nearest(capsys):
    assert cli.main(["describe", "flat-slab"]) == 2
    assert "did you mean 'flat-slab-s0'" in capsys.readouterr().err


def test_run_small_file_writes_outputs(tmp_path, capsys):
    f = tmp_path / "tiny.yaml"
    f.write_text(SMALL)
    out = tmp_path / "out"
    assert cli.main(["run", str(f), "--out-dir", str(out)]) == 0
    d = out / "tiny-torus"
    assert sorted(p.name for p in d.iterdir()) == ["bounds.csv", "identity.csv",
                                                     "rayleigh.csv", "summary.txt"]
    assert (d / "summary.txt").read_text().splitlines()[-1] == "overall\tPASS"
    assert len((d / "rayleigh.csv").read_text().splitlines()) == 7


def test_run_parse_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.yaml"
    f.write_text(SMALL.replace("  dim: 3\n", ""))
    assert cli.main(["run", str(f)]) == 2
    err = capsys.readouterr().err
    assert "manifold.dim" in err and "line 3" in err


def test_run_verdict_failure_exit_code(tmp_path, capsys):
    f = tmp_path / "fail.yaml"
    f.write_text(SMALL.replace("checks: [identity, bounds, rayleigh]",
                               "checks: [bounded-geometry]")
                 + "  bounded-geometry: {c: 1.0, k: 1}\n")
    assert cli.main(["run", str(f), "--out-dir", str(tmp_path / "o")]) == 1
    assert "(iii) interior loop/2" in capsys.readouterr().err


def test_run_solver_failure_exit_code(tmp_path, capsys):
    # an unreachable tolerance forces the iteration cap on a warped torus
    text = (SMALL.replace("upper: [1, 1, 1]", "upper: [6.3, 6.3, 6.3]")
            .replace("formula: flat", "formula: anisotropic-warp")
            .replace("s: closed", "s: closed\nsolver: {tol: 1.0e-30, max_iter: 2}"))
    f = tmp_path / "solver.yaml"
    f.write_text(text)
    out = tmp_path / "o"
    assert cli.main(["run", str(f), "--out-dir", str(out)]) == 3
    hist = out / "tiny-torus" / "residual_history.csv"
    assert str(hist) in capsys.readouterr().err
    assert len(hist.read_text().splitlines()) == 3


def test_seed_and_resolution_override(tmp_path):
    f = tmp_path / "tiny.yaml"
    f.write_text(SMALL)
    out = tmp_path / "o"
    assert cli.main(["run", str(f), "--out-dir", str(out), "--seed", "5",
                     "--resolution-override", "6"]) == 0
    rows = (out / "tiny-torus" / "identity.csv").read_text().splitlines()
    assert rows[1].split(",")[1] == "6"


def test_unknown_scenario_name(capsys):
    assert cli.main(["run", "bump-slab-s3"]) == 2
    assert "did you mean" in capsys.readouterr().err
