import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermikin import VelocityGrid, homogeneous_grid, line1d_grid
from fermikin.cli import main
from fermikin.config import DEFAULTS, build_initial, build_setup, parse_config, parse_text, serialize
from fermikin.errors import ConfigParseError, ConfigValidationError, FileShapeError
from fermikin.geometry import Slab
from fermikin.snapshot import read_snapshot, write_snapshot

SMALL = """
[velocity]
v_max = 3.0
nodes_per_axis = 7

[collision]
kernel = constant(1.5, 1.0)
sphere = lebedev26

[time]
theta = 0.1
n_steps = 3

[initial]
data = random(0.1, 0.9)

[output]
snapshot_stride = 1
cutoff_radius = 1.0
"""


def _write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_parse():
    cfg = parse_text("")
    assert cfg.domain_kind == "homogeneous"
    assert cfg.v_max == 6.0 and cfg.nodes_per_axis == 21
    assert cfg.theta == 0.1 and cfg.n_steps == 100
    assert cfg.contraction_safety == 0.5 and cfg.picard_tol == 1e-12
    assert cfg.conservative and cfg.interpolation == "logit" and cfg.projection == "pauli"
    assert cfg.B == pytest.approx(1.0)
    assert cfg.cutoff_radius is None


def test_every_default_key_is_known():
    text = "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in keys.items()) for s, keys in DEFAULTS.items())
    assert parse_text(text) == parse_text("")


def test_contraction_violation_names_theta():
    with pytest.raises(ConfigValidationError) as exc:
        parse_text("[time]\ntheta = 0.2\n")
    assert exc.value.key == "time.theta"
    assert "theta" in str(exc.value)


def test_contraction_check_can_be_skipped():
    assert parse_text("[time]\ntheta = 0.2\n", check_contraction=False).theta == 0.2


def test_unknown_key_reports_nearest():
    with pytest.raises(ConfigParseError) as exc:
        parse_text("[time]\nthetta = 0.1\n")
    assert "'theta'" in str(exc.value)
    with pytest.raises(ConfigParseError) as exc:
        parse_text("[veloctiy]\nv_max = 1\n")
    assert "[velocity]" in str(exc.value)


@pytest.mark.parametrize(
    "text, key",
    [
        ("[velocity]\nnodes_per_axis = 8\n", "velocity.nodes_per_axis"),
        ("[domain]\nkind = torus\n", "domain.kind"),
        ("[collision]\nprojection = l1\n", "collision.projection"),
        ("[time]\ncontraction_safety = 1.5\n", "time.contraction_safety"),
        ("[output]\ncutoff_radius = 4.0\n", "output.cutoff_radius"),
        ("[initial]\ndata = gaussian(1)\n", "initial.data"),
    ],
)
def test_validation_errors_carry_the_key(text, key):
    with pytest.raises(ConfigValidationError) as exc:
        parse_text(text)
    assert exc.value.key == key


def test_bad_number_is_a_parse_error():
    with pytest.raises(ConfigParseError):
        parse_text("[time]\ntheta = fast\n")


def test_serialize_round_trip_of_shipped_configs():
    for name in ("configs/homogeneous.cfg", "configs/slab.cfg"):
        cfg = parse_config(name)
        assert parse_text(serialize(cfg)) == cfg


@settings(max_examples=25, deadline=None)
@given(
    theta=st.floats(1e-4, 0.12),
    n=st.sampled_from([3, 5, 7]),
    vmax=st.floats(3.0, 10.0),
    conservative=st.booleans(),
    seed=st.integers(0, 2**31),
)
def test_serialize_round_trip_property(theta, n, vmax, conservative, seed):
    cfg = parse_text("", check_contraction=False).with_overrides(
        theta=theta, nodes_per_axis=n, v_max=vmax, conservative=conservative, seed=seed
    )
    back = parse_text(serialize(cfg), check_contraction=False)
    assert back == cfg


def test_build_initial_examples():
    vg = VelocityGrid(3.0, 5)
    sp = homogeneous_grid()
    np.testing.assert_array_equal(build_initial("constant(0.25)", sp, vg), 0.25)
    fd = build_initial("fermi_dirac(0, 1)", sp, vg)
    np.testing.assert_allclose(fd[0], 1 / (1 + np.exp(vg.speed2)), rtol=1e-14)
    assert fd[0, vg.size // 2] == 0.5
    r = build_initial("random(0.2, 0.3)", sp, vg, rng=np.random.default_rng(0))
    assert r.min() >= 0.2 and r.max() <= 0.3
    with pytest.raises(ConfigValidationError):
        build_initial("constant(1.5)", sp, vg)


def test_modulated_initial_data_varies_along_the_slab():
    cfg = parse_config("configs/slab.cfg")
    setup = build_setup(cfg)
    f = build_initial(cfg.initial, setup.spatial, setup.vgrid, cfg)
    assert f.shape == (16, 729)
    ratio = f[:, 300] / f[0, 300]
    assert ratio[-1] < ratio[0]
    assert 0 <= f.min() and f.max() <= 1


def test_initial_from_file(tmp_path):
    vg = VelocityGrid(3.0, 5)
    sp = line1d_grid(Slab((0, 0, 1), 0, 1), 4)
    f = np.random.default_rng(1).uniform(0, 1, (4, vg.size))
    path = write_snapshot(tmp_path / "s.bin", f, 3.0, 5, 0.0)
    np.testing.assert_array_equal(build_initial(f"file({path})", sp, vg), f)
    with pytest.raises(FileShapeError):
        build_initial(f"file({path})", line1d_grid(Slab((0, 0, 1), 0, 1), 5), vg)


def test_snapshot_round_trip(tmp_path):
    f = np.random.default_rng(2).uniform(0, 1, (3, 27))
    write_snapshot(tmp_path / "a.bin", f, 2.5, 3, 0.75, 12)
    s = read_snapshot(tmp_path / "a.bin")
    np.testing.assert_array_equal(s.field, f)
    assert (s.v_max, s.nodes_per_axis, s.time, s.step) == (2.5, 3, 0.75, 12)


def test_snapshot_rejects_truncated_and_foreign_files(tmp_path):
    p = write_snapshot(tmp_path / "a.bin", np.zeros((2, 27)), 2.5, 3, 0.0)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FileShapeError):
        read_snapshot(p)
    q = tmp_path / "b.bin"
    q.write_bytes(b"hello\nend\n")
    with pytest.raises(FileShapeError):
        read_snapshot(q)


# --------------------------------------------------------------------------
# command line


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_cli_run_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out), "--seed", "3"]) == 0
    moments = _rows(out / "moments.csv")
    assert len(moments) == 1 + 4
    assert len(_rows(out / "steps.csv")) == 1 + 3
    assert len(_rows(out / "cutoff_moments.csv")) == 1 + 4
    assert len(list((out / "snapshots").iterdir())) == 4
    assert parse_config(out / "run.cfg").seed == 3
    meta = (out / "metadata.txt").read_text()
    assert meta.startswith("B ")
    mass = [float(r[1]) for r in moments[1:]]
    assert max(abs(m - mass[0]) for m in mass) <= 1e-10 * mass[0]


def test_cli_run_is_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--output", str(tmp_path / d), "--steps", "2"]) == 0
    for name in ("moments.csv", "steps.csv"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    a = read_snapshot(tmp_path / "a" / "snapshots" / "step_000002.bin")
    b = read_snapshot(tmp_path / "b" / "snapshots" / "step_000002.bin")
    np.testing.assert_array_equal(a.field, b.field)


def test_cli_trace(tmp_path, capsys):
    cfg = _write(tmp_path, "[domain]\nkind = ball\nradius = 1.0\n")
    assert main(["trace", "--config", str(cfg), "--x", "0", "0", "0", "--v", "2", "0", "0", "--t", "1", "--samples", "5"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][0] == "t" and len(rows) == 6
    assert float(rows[-1][1]) == pytest.approx(0.0, abs=1e-12)  # out and back once
    assert int(rows[-1][-1]) == 1
    out = tmp_path / "t.csv"
    assert main(["trace", "--config", str(cfg), "--x", "0", "0", "0", "--v", "2", "0", "0", "--output", str(out)]) == 0
    assert len(_rows(out)) == 102


def test_cli_norm(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["norm", "--config", str(cfg)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0, rel=1e-12)
    raw = _write(tmp_path, SMALL.replace("sphere = lebedev26", "sphere = lebedev26\nnormalize_B =") , "raw.cfg")
    assert main(["norm", "--config", str(raw)]) == 0
    B = float(capsys.readouterr().out)
    assert math.isfinite(B) and B > 0


def test_cli_verify_small(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["verify", "--config", str(cfg), "--steps", "2"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 3
    bad = _write(tmp_path, "[time]\ntheta = 5\n", "bad.cfg")
    assert main(["run", "--config", str(bad)]) == 3
    assert "time.theta" in capsys.readouterr().err
    snap = write_snapshot(tmp_path / "s.bin", np.zeros((2, 27)), 3.0, 3, 0.0)
    wrong = _write(tmp_path, SMALL.replace("random(0.1, 0.9)", f"file({snap})"), "wrong.cfg")
    assert main(["run", "--config", str(wrong), "--output", str(tmp_path / "o")]) == 4
