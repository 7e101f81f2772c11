import json

import numpy as np
import pytest
import yaml

from convisa import cli, formats
from convisa.config import PipelineConfig, dump_config, load_config, parse_override, to_dict
from convisa.errors import ConfigError

TINY = {
    "synth": {"classes": 2, "clips_per_class": 2, "width": 48, "height": 48, "frames": 16,
              "sprite_radius": 8.0},
    "features": {"epochs": 5, "max_tracks_per_clip": 60, "train_rows": 2000},
    "encode": {"gmm_components": 2},
}


# --- config --------------------------------------------------------------

def test_defaults_and_roundtrip(tmp_path):
    cfg = load_config()
    assert cfg == PipelineConfig()
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_unknown_keys_name_their_path(tmp_path):
    (tmp_path / "c.yaml").write_text("synth:\n  bogus: 1\nalso_bogus: 2\n")
    with pytest.raises(ConfigError, match=r"also_bogus") as exc:
        load_config(tmp_path / "c.yaml")
    assert "unknown" in str(exc.value)
    with pytest.raises(ConfigError, match=r"synth\.bogus"):
        load_config(overrides=["synth.bogus=1"])


def test_overrides_beat_file(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(TINY))
    cfg = load_config(tmp_path / "c.yaml", ["synth.classes=3", "features.cell_grid=[1, 1, 3]"])
    assert cfg.synth.classes == 3 and cfg.synth.width == 48
    assert cfg.features.cell_grid == (1, 1, 3)


def test_json_is_accepted(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"svm_C": 10, "streams": {"method": "pca"}}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.svm_C == 10 and cfg.streams.method == "pca"


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError, match="streams"):
        load_config(overrides=["streams.method=vlad"])
    with pytest.raises(ConfigError):
        load_config(overrides=["synth.classes=1"])
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/c.yaml")


def test_to_dict_plain_types():
    d = to_dict(PipelineConfig())
    assert isinstance(d["features"]["cell_grid"], list)
    assert yaml.safe_load(yaml.safe_dump(d)) == d


# --- CLI -----------------------------------------------------------------

def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Every stage of the file pipeline on a tiny synthetic set."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    c = ("--config", cfg)
    assert run("synth", "--out", root / "data", *c) == 0
    train = sorted((root / "data" / "train").glob("*.cvid"))
    test = sorted((root / "data" / "test").glob("*.cvid"))
    v = train[0]
    assert run("flow", v, "--out", root / "f.cvol", "--middlebury", root / "flo", *c) == 0
    assert run("track", v, root / "f.cvol", "--out", root / "t.ctrj", *c) == 0
    for stream in ("appearance", "motion"):
        assert run("patches", v, root / "f.cvol", root / "t.ctrj", "--stream", stream,
                   "--out", root / f"{stream}.cpat", *c) == 0
    assert run("train-filters", root / "appearance.cpat", "--stream", "appearance",
               "--model-out", root / "lop.cisa", *c) == 0
    for split, vids in (("train", train), ("test", test)):
        assert run("extract", *vids, "--kind", "lop", "--model", root / "lop.cisa",
                   "--out", root / split, *c) == 0
        assert run("extract", *vids, "--kind", "hog", "--out", root / split, *c) == 0
    assert run("encode", root / "train", "--out", root / "train.cenc",
               "--model-out", root / "books", *c) == 0
    assert run("encode", root / "test", "--out", root / "test.cenc", "--model", root / "books", *c) == 0
    assert run("classify", root / "train.cenc", root / "test.cenc", "--out", root / "res", *c) == 0
    return root, cfg, train, test


def test_pipeline_outputs(pipeline):
    root, _, train, test = pipeline
    flows = formats.read_volume(root / "f.cvol")
    assert flows.shape == (48, 48, 15, 2)
    assert len(list((root / "flo").glob("*.flo"))) == 15
    tracks = formats.read_trajectories(root / "t.ctrj")
    pix, loc = formats.read_patches(root / "appearance.cpat")
    assert pix.shape == (len(tracks), 16, 16, 15, 1) and loc.shape == (len(tracks), 3)
    assert formats.read_patches(root / "motion.cpat")[0].shape[-1] == 2
    ds = formats.read_descriptors(root / "train" / f"{train[0].stem}.lop.cdsc")
    assert ds.kind == "LOP" and ds.values.shape[1] == 12 * 2 * 8
    Xtr, ytr = formats.read_encoded(root / "train.cenc")
    Xte, _ = formats.read_encoded(root / "test.cenc")
    assert Xtr.shape[0] == len(train) and Xte.shape[1] == Xtr.shape[1]
    np.testing.assert_allclose(np.linalg.norm(Xtr, axis=1), 1.0, atol=1e-6)
    metrics = json.loads((root / "res" / "metrics.json").read_text())
    assert 0.0 <= metrics["macc"] <= 1.0 and len(metrics["predictions"]) == len(test)
    assert (root / "res" / "metrics.txt").read_text().startswith("MAcc")


def test_sidecars_record_run(pipeline):
    root, cfg, _, _ = pipeline
    man = json.loads((root / "lop.cisa.manifest.json").read_text())
    assert man["command"] == "train-filters"
    assert str(root / "appearance.cpat") in man["inputs"]
    assert len(man["inputs"][str(root / "appearance.cpat")]) == 64
    resolved = load_config(root / "lop.cisa.config.yaml")
    assert resolved == load_config(cfg)
    assert (root / "res" / "manifest.json").exists() and (root / "res" / "config.yaml").exists()


def test_visualize_and_correlation(pipeline, tmp_path):
    root, cfg, _, _ = pipeline
    assert run("visualize", root / "lop.cisa", "--out", tmp_path / "viz", "--config", cfg) == 0
    assert (tmp_path / "viz" / "gallery.png").stat().st_size > 0
    assert (tmp_path / "viz" / "spectrum.png").exists()
    assert run("correlation", root / "appearance.cpat", root / "motion.cpat",
               "--out", tmp_path / "corr.json") == 0
    rep = json.loads((tmp_path / "corr.json").read_text())
    assert -1 <= rep["flow"] <= 1 and -1 <= rep["pixels"] <= 1


def test_synth_rerun_byte_identical(tmp_path, pipeline):
    _, cfg, _, _ = pipeline
    for name in ("a", "b"):
        assert run("synth", "--out", tmp_path / name, "--config", cfg, "--seed", 3) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        if rel.name == "manifest.json":
            continue
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_exit_code_config(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "x", "--set", "synth.bogus=1") == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["exit_code"] == 2 and "synth.bogus" in err["message"]


def test_exit_code_format(tmp_path, capsys):
    assert run("flow", tmp_path / "missing.cvid", "--out", tmp_path / "f.cvol") == 3
    (tmp_path / "junk.cvid").write_bytes(b"CVID\0\0")
    assert run("flow", tmp_path / "junk.cvid", "--out", tmp_path / "f.cvol") == 3
    assert "truncated" in capsys.readouterr().err


def test_exit_code_numerical(tmp_path, capsys):
    formats.write_patches(tmp_path / "z.cpat", np.zeros((40, 16, 16, 15, 1)), np.full((40, 3), 0.5))
    assert run("train-filters", tmp_path / "z.cpat", "--stream", "appearance",
               "--model-out", tmp_path / "m.cisa") == 4
    assert json.loads(capsys.readouterr().err.strip())["error"] == "NumericalError"


def test_model_kind_mismatch_names_dims(pipeline, tmp_path, capsys):
    root, cfg, train, _ = pipeline
    code = run("extract", train[0], "--kind", "lof", "--model", root / "lop.cisa",
               "--out", tmp_path / "d", "--config", cfg)
    assert code == 3
    msg = json.loads(capsys.readouterr().err.strip())["message"]
    assert "128" in msg and "320" in msg


def test_extract_learned_requires_model(pipeline, tmp_path):
    _, cfg, train, _ = pipeline
    assert run("extract", train[0], "--kind", "lop", "--out", tmp_path / "d", "--config", cfg) == 2


def test_classify_dimension_mismatch(tmp_path):
    formats.write_encoded(tmp_path / "a", np.eye(4)[:2], [0, 1])
    formats.write_encoded(tmp_path / "b", np.eye(5)[:2], [0, 1])
    assert run("classify", tmp_path / "a", tmp_path / "b", "--out", tmp_path / "r") == 3


def test_train_filters_pca_method(pipeline, tmp_path):
    root, cfg, _, _ = pipeline
    assert run("train-filters", root / "motion.cpat", "--stream", "motion", "--method", "pca",
               "--structure", "pooling", "--model-out", tmp_path / "lof.cisa", "--config", cfg) == 0
    model = formats.read_isa_model(tmp_path / "lof.cisa")
    assert model.input_dim == 8 * 8 * 1 * 2
