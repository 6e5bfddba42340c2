import io
import json

import pytest

from conecover.cli import dispatch, dumps, parse_axis


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    rc = dispatch(list(argv), out, err)
    return rc, out.getvalue(), err.getvalue()


def test_dumps_floats():
    assert dumps({"x": 0.1}) == '{\n  "x": 0.10000000000000001\n}'
    assert dumps([float("inf"), float("nan"), 2]) == "[\n  null,\n  null,\n  2\n]"


def test_validate(entropy_spec_path):
    rc, out, _ = run("validate", "--spec", str(entropy_spec_path))
    assert rc == 0
    rep = json.loads(out)
    assert rep["result"]["valid"] and rep["result"]["n_vertices"] == 3
    for k in ("tool", "version", "command", "spec_hash", "source", "params", "seed", "tolerances"):
        assert k in rep


def test_analyze_entropy(entropy_spec_path):
    rc, out, _ = run("analyze", "--spec", str(entropy_spec_path))
    res = json.loads(out)["result"]
    assert rc == 0
    assert res["h"] == pytest.approx(0.0604986392, abs=1e-9)
    assert res["ell0"] == pytest.approx(0.2361938985, abs=1e-9)


def test_analyze_tsv(entropy_spec_path):
    rc, out, _ = run("analyze", "--spec", str(entropy_spec_path), "--format", "tsv")
    lines = out.splitlines()
    assert rc == 0 and lines[0].startswith("# tool=conecover")
    assert lines[1].split("\t")[:2] == ["spec_id", "verdict"]
    assert lines[2].split("\t")[1] == "transient"


def test_byte_identical(entropy_spec_path):
    a = run("simulate", "--spec", str(entropy_spec_path), "--runs", "50", "--horizon", "2000", "--seed", "7")
    b = run("simulate", "--spec", str(entropy_spec_path), "--runs", "50", "--horizon", "2000", "--seed", "7")
    assert a == b and a[0] == 0


def test_single_trajectory(entropy_spec_path):
    rc, out, _ = run("simulate", "--spec", str(entropy_spec_path), "--runs", "1", "--horizon", "30",
                     "--format", "tsv")
    assert rc == 0 and len(out.splitlines()) == 1 + 1 + 31


def test_growth_tsv():
    rc, out, _ = run("growth", "--generator", "homogeneous_tree", "--levels", "5", "--format", "tsv")
    assert rc == 0
    rows = [l.split("\t") for l in out.splitlines()[2:]]
    assert [int(r[1]) for r in rows] == [2**n for n in range(6)]


def test_classify_homesick():
    rc, out, _ = run("classify", "--generator", "homesick", "--params", "lam=3")
    assert rc == 0 and json.loads(out)["result"]["verdict"] == "recurrent"
    rc, out, _ = run("classify", "--generator", "homesick", "--params", "lam=1.5")
    assert json.loads(out)["result"]["verdict"] == "transient"


def test_couple_small(entropy_spec_path):
    rc, out, _ = run("couple", "--spec", str(entropy_spec_path), "--runs", "200", "--horizon", "2000")
    res = json.loads(out)["result"]
    assert rc == 0 and res["q_loop_analytic"] == pytest.approx(0.56082256, abs=1e-7)


def test_rwdcre():
    rc, out, _ = run("rwdcre", "--params", "omega_support=0.5", "nu_support=0.3")
    assert rc == 0 and json.loads(out)["result"]["verdict"] == "transient"


def test_sweep_homesick_flip():
    rc, out, _ = run("sweep", "--generator", "homesick", "--grid", "lam=1.5:2.5:0.25")
    assert rc == 0
    lines = out.splitlines()
    header = lines[1].split("\t")
    rows = [dict(zip(header, l.split("\t"))) for l in lines[2:]]
    flips = [r["lam"] for r in rows if r["transition"] == "1"]
    assert flips == ["2.0"]  # critical point counts as not transient
    before = [r for r in rows if float(r["lam"]) < 2]
    assert all(r["verdict"] == "transient" for r in before)


def test_sweep_beta_speed():
    rc, out, _ = run("sweep", "--generator", "homogeneous_tree", "--grid", "beta=0.1:0.4:0.1")
    lines = out.splitlines()
    header = lines[1].split("\t")
    for l in lines[2:]:
        r = dict(zip(header, l.split("\t")))
        assert float(r["ell0"]) == pytest.approx(1 - 2 * float(r["beta"]), abs=1e-9)


def test_sweep_empty_grid():
    rc, out, _ = run("sweep", "--generator", "homesick", "--grid", "lam=")
    assert rc == 0 and len(out.splitlines()) == 2


def test_parse_axis():
    assert parse_axis("x", "0:1:0.5") == [0.0, 0.5, 1.0]
    assert parse_axis("x", "1,3") == [1.0, 3.0]
    with pytest.raises(ValueError):
        parse_axis("x", "0:1")


def test_exit_codes(tmp_path):
    assert run("analyze", "--spec", str(tmp_path / "missing.json"))[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc, out, _ = run("analyze", "--spec", str(bad))
    assert rc == 1 and "error" in json.loads(out)
    assert run("analyze", "--generator", "nope")[0] == 2
    assert run("simulate", "--generator", "homesick", "--runs", "-3")[0] == 2
    assert run("sweep", "--generator", "homesick", "--grid", "a=1", "--grid", "b=1", "--grid", "c=1")[0] == 2
