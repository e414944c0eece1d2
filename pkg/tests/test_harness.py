import os
from dataclasses import replace

import numpy as np
import pytest

from roughflow.errors import ConfigError
from roughflow.harness import (
    ExperimentConfig,
    RunManifest,
    StageError,
    decay_plot_svg,
    load_config,
    preset_config,
    read_manifest_files,
    read_table,
    run_blob_verification,
    run_experiment,
    run_flow,
    run_transport_sweep,
)
from roughflow.harness.cli import main
from roughflow.harness.config import PRESETS, apply_overrides, describe_presets

SMALL = ExperimentConfig(h0=1e-3, levels=2, T=0.05, cells=8, backend="passthrough")


def files_of(d):
    out = {}
    for root, _, names in os.walk(d):
        for n in names:
            rel = os.path.relpath(os.path.join(root, n), d)
            if rel != "manifest.txt":
                with open(os.path.join(root, n), "rb") as fh:
                    out[rel] = fh.read()
    return out


def test_config_parse_and_aliases():
    cfg = load_config("[field]\nid = power_rotation\nalpha = 0.3\n[run]\nK = 2\nh0 = 1e-3\n[region]\npoint = 0.01, 0\n")
    assert cfg.field_id == "power_rotation" and cfg.alpha == 0.3 and cfg.levels == 2
    assert cfg.point == (0.01, 0.0)
    back = load_config(cfg.echo())
    assert back == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[field]\nfoo = 1\n",
        "[nosuch]\nx = 1\n",
        "[field]\nid = nope\n",
        "[scheme]\ntheta = 1.5\n",
        "[run]\nh0 = abc\n",
        "[run]\nh0 = 0.1\nK = 3\nT = 0.5\n",
        "[field]\nid = sqrt_sine\n[run]\nreference = exact\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_unknown_override_key():
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), {"colour": "red"})


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    cfg = preset_config(name)
    assert cfg.preset == name
    for key, value in PRESETS[name].items():
        assert getattr(cfg, key) == value


def test_preset_values():
    a = preset_config("fig1a")
    assert (a.alpha, a.theta, a.point) == (0.36, 0.2, (0.01, 0.0))
    b = preset_config("fig1b")
    assert (b.alpha, b.theta) == (0.35, 0.0)
    assert preset_config("fig2a").theta == 0.8 and preset_config("fig2a").field_id == "sqrt_sine"
    c = preset_config("fig2b")
    assert (c.theta, c.p, c.field_id) == (0.7, 100.0, "log_power")
    assert preset_config("blob").eps_ladder == (0.5, 0.35, 0.25)
    assert preset_config("fig1a", full_scale=True).h0 == 1e-4
    assert "desk-scale" in describe_presets()
    with pytest.raises(ConfigError):
        preset_config("fig9")


def test_desk_scale_marked_in_outputs(tmp_path):
    cfg = replace(preset_config("fig1a"), levels=1, T=0.01)
    m = run_experiment(cfg, tmp_path / "r")
    text = (tmp_path / "r" / "errors.csv").read_text()
    assert "# preset=fig1a" in text
    assert "# desk-scale: h0 = 1e-3 (full scale 1e-4)" in text


def test_convergence_run_and_manifest(tmp_path):
    m = run_experiment(SMALL, tmp_path / "r")
    assert isinstance(m, RunManifest) and m.verify()
    names = set(read_manifest_files(tmp_path / "r" / "manifest.txt"))
    assert names == set(m.files) == set(files_of(tmp_path / "r"))
    assert {"errors.csv", "fit.txt", "plot.svg"} <= names
    cols, rows, comments = read_table(tmp_path / "r" / "errors.csv")
    rows = np.array(rows)
    assert any(c.startswith("fit") or "order" in c for c in comments)
    assert cols[:3] == ["h", "eps", "L1_error"]
    assert len(rows) == 3
    assert np.allclose(rows[:, 0], SMALL.ladder)
    assert np.all(rows[:, cols.index("worst_ratio")] <= 0.5)
    assert np.all(rows[:, cols.index("chebyshev_ok")] == 1)
    (tmp_path / "r" / "fit.txt").write_text("tampered")
    assert not m.verify()


def test_determinism(tmp_path):
    run_experiment(SMALL, tmp_path / "a")
    run_experiment(replace(SMALL, workers=2), tmp_path / "b")
    fa, fb = files_of(tmp_path / "a"), files_of(tmp_path / "b")
    assert fa.keys() == fb.keys()
    for name in fa:
        if name.endswith(".csv") or name == "fit.txt":
            assert fa[name] == fb[name], name


def test_finest_reference_rows(tmp_path):
    cfg = replace(SMALL, field_id="log_power", p=100.0, reference="finest")
    m = run_experiment(cfg, tmp_path / "r")
    assert [r.h for r in m.result.rows] == SMALL.ladder[1:]


def test_single_level_is_degenerate(tmp_path):
    m = run_experiment(replace(SMALL, levels=0), tmp_path / "r")
    assert len(m.result.rows) == 1
    assert m.result.fit.degenerate
    assert "degenerate" in (tmp_path / "r" / "fit.txt").read_text()


def test_point_mode(tmp_path):
    m = run_experiment(replace(SMALL, point=(0.5, 0.0)), tmp_path / "r")
    assert m.result.metric == "pointwise_error"
    assert np.all(np.isfinite(m.result.errors))


def test_run_flow(tmp_path):
    m = run_flow(replace(SMALL, point=(0.5, 0.0)), tmp_path / "r")
    cols, rows, _ = read_table(tmp_path / "r" / "flow.csv")
    assert len(rows) == int(round(SMALL.T / SMALL.h0)) + 1
    assert m.verify()


def test_failure_leaves_no_partial_output(tmp_path):
    cfg = replace(ExperimentConfig(), eps_ladder=(0.1,), cell_cap=1000)
    with pytest.raises(StageError) as info:
        run_blob_verification(cfg, tmp_path / "r")
    assert info.value.stage
    assert os.listdir(tmp_path) == []


def test_failure_keeps_previous_run(tmp_path):
    run_experiment(SMALL, tmp_path / "r")
    before = files_of(tmp_path / "r")
    with pytest.raises(StageError):
        run_blob_verification(replace(SMALL, eps_ladder=(0.1,), cell_cap=1000), tmp_path / "r")
    assert files_of(tmp_path / "r") == before
    assert sorted(os.listdir(tmp_path)) == ["r"]


def test_blob_zero_and_cell(tmp_path):
    m = run_blob_verification(replace(ExperimentConfig(), omega_id="zero", eps_ladder=(0.5, 0.35)), tmp_path / "z")
    assert all(r.l1_distance == 0.0 and r.gamma_sum == 0.0 for r in m.result.rows)
    assert m.result.ratio_drift == 1.0
    m = run_blob_verification(replace(ExperimentConfig(), omega_id="cell", eps_ladder=(0.5,)), tmp_path / "c")
    assert len(m.result.rows) == 1 and m.verify()


def test_transport_zero_field(tmp_path):
    cfg = replace(
        preset_config("transport"), field_id="rotation", omega=0.0, levels=1, T=0.2, times=(0.2,),
        deltas=(0.1,), transport_cells=32,
    )
    m = run_transport_sweep(cfg, tmp_path / "t")
    for r in m.result.rows:
        assert r.flow_error == 0.0
        assert r.total_error == pytest.approx(r.datum_error, abs=1e-15)
    assert any(n.startswith("snapshots/") for n in m.files)


def test_svg_plot():
    svg = decay_plot_svg([1e-3, 2e-3, 4e-3], [1e-5, 2e-5, 4e-5], title="t")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "polyline" in svg


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "c")
    argv = ["converge", "--h0", "1e-3", "--levels", "1", "--T", "0.01", "--cells", "4", "--output", out]
    assert main(argv) == 0
    assert os.path.isfile(os.path.join(out, "manifest.txt"))
    assert main(["converge", "--theta", "2"]) == 2
    assert main(["converge", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["blob", "--eps-ladder", "0.1", "--cell-cap", "1000", "--output", str(tmp_path / "b")]) == 3
    assert not os.path.exists(tmp_path / "b")
    assert main(["presets"]) == 0
    assert "fig2a" in capsys.readouterr().out


def test_cli_precedence(tmp_path):
    from roughflow.harness.cli import build_parser, resolve_config

    ini = tmp_path / "c.ini"
    ini.write_text("[scheme]\ntheta = 0.4\n[run]\nlevels = 2\n")
    args = build_parser().parse_args(["converge", "--preset", "fig1a", "--config", str(ini), "--levels", "1"])
    cfg = resolve_config(args)
    assert cfg.alpha == 0.36 and cfg.theta == 0.4 and cfg.levels == 1
