import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from srgwdr.cli import DEFAULT_ALPHAS, main
from srgwdr.io import read_json, read_matrix
from srgwdr.plotting import plot_embedding

SVG = "{http://www.w3.org/2000/svg}"


def marker_count(path):
    root = ET.parse(path).getroot()
    groups = [g for g in root.iter(f"{SVG}g") if g.get("id") == "prototypes"]
    return sum(len(g.findall(f"{SVG}path")) for g in groups)


@pytest.fixture(scope="module")
def blobs(tmp_path_factory):
    d = tmp_path_factory.mktemp("blobs")
    assert main(["make-blobs", "--out", str(d / "X.csv"), "--labels-out", str(d / "y.csv")]) == 0
    return d / "X.csv", d / "y.csv"


def run(*args):
    return main(["run", *map(str, args)])


def payload(out):
    """Every emitted file except the timing fields of the manifest."""
    files = {}
    for p in sorted(out.rglob("*")):
        if not p.is_file():
            continue
        if p.name == "manifest.json":
            m = read_json(p)
            m.pop("timings")
            m["config"].pop("out")
            m["config"].pop("jobs")
            files[p.name] = json.dumps(m, sort_keys=True)
        else:
            files[str(p.relative_to(out))] = p.read_bytes()
    return files


def test_make_blobs_shapes(blobs):
    X = read_matrix(blobs[0])
    y = read_matrix(blobs[1])
    assert X.shape == (300, 10)
    assert sorted(np.unique(y)) == [0, 1, 2]


def test_cluster_srgwb_outputs(blobs, tmp_path):
    X, y = blobs
    out = tmp_path / "b"
    assert run("--input", X, "--labels", y, "--task", "cluster_srgwb", "--n", 3,
               "--seeds", "0,1,2,3,4", "--out", out) == 0
    summary = read_json(out / "metrics.json")
    assert summary["aggregate"]["ari"]["mean"] >= 0.95
    assert len(summary["per_seed"]) == 5
    for s in range(5):
        assert (out / f"labels_seed{s}.csv").exists()
        Cb = read_matrix(out / f"cbar_seed{s}.csv")
        hb = read_matrix(out / f"hbar_seed{s}.csv")
        assert Cb.shape == (3, 3) and hb.shape == (3, 1)
        assert abs(hb.sum() - 1) <= 1e-9
    manifest = read_json(out / "manifest.json")
    assert {"config", "seeds", "version", "timings"} <= set(manifest)
    assert manifest["seeds"] == [0, 1, 2, 3, 4]
    assert {"load", "affinity", "solve"} <= set(manifest["timings"])


def test_srgwi_not_better_than_srgwb(blobs, tmp_path):
    X, y = blobs
    med = {}
    for task in ("cluster_srgwb", "cluster_srgwi"):
        out = tmp_path / task
        assert run("--input", X, "--labels", y, "--task", task, "--n", 3,
                   "--seeds", "0,1,2,3,4", "--out", out) == 0
        med[task] = read_json(out / "metrics.json")["aggregate"]["ari"]["median"]
    assert med["cluster_srgwi"] <= med["cluster_srgwb"]


def test_missing_labels_gives_only_cluster_count(blobs, tmp_path):
    out = tmp_path / "nolab"
    assert run("--input", blobs[0], "--task", "cluster_srgwb", "--n", 3, "--out", out) == 0
    assert read_json(out / "metrics_seed0.json") == {"effective_clusters": 3}


def test_gwdr_svg_and_csvs(blobs, tmp_path):
    X, y = blobs
    out = tmp_path / "g"
    assert run("--input", X, "--labels", y, "--task", "gwdr", "--n", 3, "--d", 2,
               "--out", out) == 0
    svg = out / "embedding_seed0.svg"
    assert marker_count(svg) == 3
    assert ET.parse(svg).getroot().get("viewBox") == "0 0 800 800"
    emb = read_matrix(out / "embedding_seed0.csv")
    w = read_matrix(out / "weights_seed0.csv")
    assert emb.shape == (3, 3) and w.shape == (3, 2)
    assert not (out / "features_seed0.csv").exists()
    out2 = tmp_path / "g2"
    assert run("--input", X, "--labels", y, "--task", "gwdr", "--n", 3, "--d", 2,
               "--out", out2) == 0
    assert svg.read_bytes() == (out2 / "embedding_seed0.svg").read_bytes()


def test_empty_prototype_left_out_of_svg(tmp_path):
    Z = np.arange(8.0).reshape(4, 2)
    plot_embedding(Z, [0.5, 0.0, 0.25, 0.25], tmp_path / "e.svg")
    assert marker_count(tmp_path / "e.svg") == 3


def test_marker_area_proportional_to_weight(tmp_path):
    Z = np.array([[0.0, 0.0], [10.0, 10.0]])
    plot_embedding(Z, [0.8, 0.2], tmp_path / "a.svg")
    root = ET.parse(tmp_path / "a.svg").getroot()
    g = next(g for g in root.iter(f"{SVG}g") if g.get("id") == "prototypes")
    widths = []
    for p in g.findall(f"{SVG}path"):
        nums = np.array([float(t) for t in p.get("d").replace("M", " ").replace("C", " ")
                         .replace("z", " ").split()]).reshape(-1, 2)
        widths.append(np.ptp(nums[:, 0]))
    assert (widths[0] / widths[1]) ** 2 == pytest.approx(4.0, rel=1e-3)


def test_fgwdr_writes_features_and_images(tmp_path):
    rng = np.random.default_rng(0)
    imgs = np.vstack([rng.normal(m, 0.1, (20, 6)) for m in (0.0, 3.0)])
    np.savetxt(tmp_path / "img.csv", imgs, delimiter=",")
    out = tmp_path / "f"
    assert run("--input", tmp_path / "img.csv", "--task", "fgwdr", "--alpha", 0.5, "--n", 2,
               "--d", 2, "--image-shape", 2, 3, "--out", out) == 0
    assert read_matrix(out / "features_seed0.csv").shape[1] == 6
    mats = sorted((out / "prototype_images_seed0").glob("*.csv"))
    assert mats and read_matrix(mats[0]).shape == (2, 3)
    assert (out / "prototype_images_seed0.svg").exists()


def test_alpha_grid_default_and_override(blobs, tmp_path):
    X, y = blobs
    out = tmp_path / "grid"
    assert run("--input", X, "--labels", y, "--task", "alpha_grid", "--kernel", "sne",
               "--n", 10, "--d", 2, "--jobs", 2, "--out", out) == 0
    table = read_json(out / "alpha_grid.json")
    assert [r["alpha"] for r in table["rows"]] == list(DEFAULT_ALPHAS)
    assert len(table["rows"]) == 13
    assert table["alpha_star"] > 0
    csv = read_matrix(out / "alpha_grid.csv", allow_nan=True)
    assert csv.shape == (13, 4)
    out2 = tmp_path / "grid2"
    assert run("--input", X, "--labels", y, "--task", "alpha_grid", "--grid", "0,1",
               "--n", 4, "--out", out2) == 0
    assert len(read_json(out2 / "alpha_grid.json")["rows"]) == 2


def test_default_grid_values():
    assert DEFAULT_ALPHAS == (0, 0.000001, 0.0003, 0.005, 0.1, 0.25, 0.5, 0.75, 0.9,
                              0.995, 0.9997, 0.999999, 1)


def test_config_file_with_overrides(blobs, tmp_path):
    X, y = blobs
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": str(X), "task": "cluster_srgwi", "n": 2,
                               "seeds": [3], "solver": {"restarts": 2}}))
    out = tmp_path / "c"
    assert main(["run", "--config", str(cfg), "--n", "3", "--out", str(out)]) == 0
    m = read_json(out / "manifest.json")
    assert m["config"]["n"] == 3 and m["config"]["task"] == "cluster_srgwi"
    assert m["config"]["solver"] == {"restarts": 2}
    assert m["seeds"] == [3]


def test_parallel_and_serial_runs_match(blobs, tmp_path):
    X, y = blobs
    outs = []
    for jobs in (1, 3):
        out = tmp_path / f"j{jobs}"
        assert run("--input", X, "--labels", y, "--task", "fgwdr", "--n", 3, "--d", 2,
                   "--seeds", "0,1,2", "--jobs", jobs, "--out", out) == 0
        outs.append(payload(out))
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "args",
    [
        ["--input", "missing.csv"],
        ["--task", "cluster_srgwb"],
        ["--input", "{X}", "--n", "1000"],
        ["--input", "{X}", "--task", "alpha_grid"],
        ["--input", "{X}", "--labels", "missing.csv"],
        ["--input", "{X}", "--seeds", "a,b"],
        ["--input", "{X}", "--task", "cluster_srgwi", "--loss", "kl"],
        ["--input", "{X}", "--alpha", "2"],
    ],
)
def test_config_errors_exit_1(blobs, args, capsys):
    args = [a.replace("{X}", str(blobs[0])) for a in args]
    assert main(["run", *args]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_config_keys_and_json(tmp_path, blobs):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": str(blobs[0]), "bogus": 1}))
    assert main(["run", "--config", str(cfg)]) == 1
    cfg.write_text("{\n  bad json")
    assert main(["run", "--config", str(cfg)]) == 1


def test_parse_error_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,x\n")
    assert main(["run", "--input", str(p)]) == 1
    assert "bad.csv:2" in capsys.readouterr().err


def test_solver_failure_exit_2(tmp_path, capsys):
    # mds kernel has negative entries: the KL barycenter is undefined
    rng = np.random.default_rng(0)
    np.savetxt(tmp_path / "X.csv", rng.standard_normal((12, 2)), delimiter=",")
    assert main(["run", "--input", str(tmp_path / "X.csv"), "--loss", "kl", "--n", "2",
                 "--out", str(tmp_path / "o")]) == 2
    assert "solver failure" in capsys.readouterr().err
