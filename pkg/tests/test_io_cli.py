import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from movingframes import cli
from movingframes.experiments import build_hash
from movingframes.grid import Field, GridDomain, exterior_derivative
from movingframes.io import MAGIC, field_from_bytes, field_to_bytes, read_field, to_json, write_field
from movingframes.maps import band_limited

SCHEMA = cli.load_schema()


@settings(max_examples=10, deadline=None)
@given(m=st.sampled_from([2, 3]), seed=st.integers(0, 1000), degree=st.sampled_from([0, 1]))
def test_mff1_roundtrip(m, seed, degree):
    dom = GridDomain(m, 12)
    f = band_limited(dom, seed)
    if degree == 1:
        f = exterior_derivative(f)
    g = field_from_bytes(field_to_bytes(f), dom)
    assert g.degree == f.degree and np.array_equal(g.values, f.values)


def test_mff1_matrix_file(tmp_path):
    dom = GridDomain(2, 10)
    vals = np.zeros((dom.n_nodes, 3, 3))
    vals[dom.valid] = np.arange(9.0).reshape(3, 3)
    f = Field.from_nodes(dom, vals)
    write_field(tmp_path / "P.mff", f)
    raw = (tmp_path / "P.mff").read_bytes()
    assert raw[:4] == MAGIC
    g = read_field(tmp_path / "P.mff")
    assert g.domain.N == 10 and g.value_kind == "matrix" and np.array_equal(g.values, f.values)


def test_mff1_rejects_bad_input():
    dom = GridDomain(2, 10)
    data = field_to_bytes(band_limited(dom, 1))
    with pytest.raises(ValueError):
        field_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        field_from_bytes(data[:-8])
    with pytest.raises(ValueError):
        field_from_bytes(data, GridDomain(2, 12))


def test_json_is_sorted_and_handles_numpy():
    text = to_json({"b": np.float64(1.5), "a": np.arange(3), "c": np.bool_(True)})
    assert json.loads(text) == {"a": [0, 1, 2], "b": 1.5, "c": True}
    assert text.index('"a"') < text.index('"b"')


def test_config_defaults_and_overrides():
    cfg = cli.load_config("norms", "[grid]\nN = 24\nm = 3\n[norms]\nverbose = true\n")
    assert cfg["grid"]["N"] == 24 and cfg["grid"]["m"] == 3 and cfg["norms"]["verbose"] is True
    cfg = cli.load_config("regularity", "[experiment]\nseeds = 1-4, 9\n")
    assert cfg["experiment"]["seeds"] == [1, 2, 3, 4, 9]


@pytest.mark.parametrize("text,field", [
    ("[grid]\nNN = 4\n", "grid.NN"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[grid]\nN = 4\n", "grid.N"),
    ("[grid]\nm = two\n", "grid.m"),
    ("[solver]\nscheme = rk4\n", "solver.scheme"),
    ("[map]\nfamily = random\n", "map.seed"),
])
def test_invalid_config_names_field(text, field):
    with pytest.raises(cli.ConfigError, match=field.replace(".", r"\.")):
        cli.load_config("norms", text)


def test_usage_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ncolour = red\n")
    assert cli.main(["norms", "--config", str(bad)]) == 2
    assert "grid.colour" in capsys.readouterr().err


def test_seed_flag_feeds_random_family(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text("[map]\nfamily = random\namplitude = 0.3\n[grid]\nN = 24\n")
    assert cli.main(["norms", "--config", str(ini), "--seed", "5", "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["map"]["seed"] == 5


def _strip(report):
    return {k: v for k, v in report.items() if k not in ("timing", "environment")}


def test_report_schema_and_reproducibility(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["norms", "--resolution", "24", "--out", str(out), "--quiet"])
        assert code == 0
        outs.append(out)
    reports = [json.loads((o / "report.json").read_text()) for o in outs]
    for rep in reports:
        jsonschema.validate(rep, SCHEMA)
        assert rep["environment"]["build_hash"] == build_hash()
        for c in rep["checks"]:
            assert c["criterion"] is None or c["criterion"].startswith("C")
    assert _strip(reports[0]) == _strip(reports[1])


def test_verbose_norms_write_csv(tmp_path):
    ini = tmp_path / "v.ini"
    ini.write_text("[norms]\nverbose = yes\n[grid]\nN = 24\n")
    assert cli.main(["norms", "--config", str(ini), "--out", str(tmp_path), "--quiet"]) == 0
    text = (tmp_path / "morrey_balls.csv").read_bytes()
    assert b"\r" not in text and text.startswith(b"center_node,x0,x1,radius,value\n")


def test_wente_subcommand_artifacts_byte_identical(tmp_path):
    ini = tmp_path / "w.ini"
    ini.write_text("[grid]\nN = 32\n[experiment]\nseeds = 1-3\n")
    for k in range(2):
        assert cli.main(["wente-constant", "--config", str(ini), "--out", str(tmp_path / str(k)), "--quiet"]) == 0
    assert (tmp_path / "0" / "wente.csv").read_bytes() == (tmp_path / "1" / "wente.csv").read_bytes()


def test_harmonic_flow_writes_checkpoint(tmp_path):
    assert cli.main(["harmonic-flow", "--resolution", "24", "--out", str(tmp_path), "--quiet"]) == 0
    u = read_field(tmp_path / "u.mff")
    assert u.domain.N == 24 and u.value_shape == (3,)
    rep = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(rep, SCHEMA)
    assert rep["artifacts"] == ["u.mff"]


def test_failing_check_gives_nonzero_exit(tmp_path):
    # one flow step cannot reach a tolerance below the rounding floor
    ini = tmp_path / "f.ini"
    ini.write_text("[solver]\nmax_iters = 1\ntol = 1e-14\n[grid]\nN = 16\n")
    assert cli.main(["harmonic-flow", "--config", str(ini), "--quiet"]) == 1


def test_docs_schema_matches_package_copy():
    from pathlib import Path
    docs = Path(__file__).resolve().parents[1] / "docs" / "report.schema.json"
    assert json.loads(docs.read_text()) == SCHEMA
