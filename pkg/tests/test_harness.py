import json

import pytest

from fedcomloc.harness import ConfigError, expand_jobs, load_config, main, run_experiment, validate_config
from fedcomloc.metrics import CSV_HEADER

TINY_CONFIG = """
name = "tiny"
output_dir = "{out}"
{grid}

[dataset]
kind = "synth"
n = 200
features = 6
classes = 3
margin = 4.0

[partition]
n_clients = 4
alpha = 0.5

[model]
kind = "logreg"
l2_reg = 0.01

[fed]
algorithm = "fedcomloc"
variant = "com"
sample_size = 2
p = 0.5
gamma = 0.1
iterations = 30
batch_size = 16
seed = 9
compressor = {{ kind = "topk", density = 0.5 }}
{cells}
"""


def write_config(tmp_path, out="out", grid="", cells=""):
    path = tmp_path / "exp.toml"
    path.write_text(TINY_CONFIG.format(out=tmp_path / out, grid=grid, cells=cells))
    return path


def good_raw():
    return {
        "dataset": {"kind": "synth", "n": 100, "features": 4, "classes": 2, "margin": 2.0},
        "partition": {"n_clients": 4, "alpha": 0.7},
        "model": {"kind": "logreg"},
        "fed": {"sample_size": 2, "p": 0.1},
    }


# --- validation -----------------------------------------------------------------


def test_validate_accepts_good_config():
    assert validate_config(good_raw()) == []


def test_validate_flags_p_zero():
    raw = good_raw()
    raw["fed"]["p"] = 0
    assert any("fed.p" in v for v in validate_config(raw))


def test_validate_flags_bad_density():
    raw = good_raw()
    raw["fed"]["compressor"] = {"kind": "topk", "density": 1.5}
    assert any("compressor.density" in v for v in validate_config(raw))


def test_validate_flags_oversized_sample():
    raw = good_raw()
    raw["fed"]["sample_size"] = 9
    assert any("sample_size" in v for v in validate_config(raw))


def test_validate_flags_missing_tables_and_unknown_keys():
    violations = validate_config({"fed": {"bogus_key": 1}})
    assert any("dataset: missing" in v for v in violations)
    assert any("fed.bogus_key" in v for v in violations)


def test_validate_flags_bad_cells():
    raw = good_raw()
    raw["cells"] = [
        {"label": "a", "gamma": 0.1},
        {"label": "a", "p": 0.2},
        {"label": "b/ad", "p": 0.2},
        {"label": "c", "mystery": 1},
        {"label": "d", "p": -1.0},
    ]
    violations = validate_config(raw)
    assert any("duplicate label" in v for v in violations)
    assert any("file-safe" in v for v in violations)
    assert any("mystery" in v for v in violations)
    assert any("cells[d].fed.p" in v for v in violations)


def test_validate_flags_alpha_and_dataset_problems():
    raw = good_raw()
    raw["partition"]["alpha"] = 0
    raw["dataset"]["classes"] = 1
    violations = validate_config(raw)
    assert any("partition.alpha" in v for v in violations)
    assert any("dataset.classes" in v for v in violations)


# --- config loading ----------------------------------------------------------------


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_load_config_syntax_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("this is not toml ===")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_invalid_values(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(TINY_CONFIG.format(out="o", grid="", cells="").replace("p = 0.5", "p = 0.0"))
    with pytest.raises(ConfigError, match="fed.p"):
        load_config(path)


def test_seed_override(tmp_path):
    path = write_config(tmp_path)
    assert load_config(path).base_fed.seed == 9
    assert load_config(path, seed_override=123).base_fed.seed == 123


def test_expand_jobs_grid_times_cells(tmp_path):
    cells = '\n[[cells]]\nlabel = "K50"\n\n[[cells]]\nlabel = "K10"\ncompressor = { kind = "topk", density = 0.1 }\n'
    path = write_config(tmp_path, grid="grid = [0.05, 0.1]", cells=cells)
    jobs = expand_jobs(load_config(path))
    assert [(j.stem, j.gamma) for j in jobs] == [
        ("K50__gamma0.05", 0.05),
        ("K50__gamma0.1", 0.1),
        ("K10__gamma0.05", 0.05),
        ("K10__gamma0.1", 0.1),
    ]
    assert jobs[2].fed_config.compressor.density == 0.1
    assert jobs[2].fed_config.gamma == 0.05


def test_expand_jobs_without_cells_uses_algorithm_label(tmp_path):
    jobs = expand_jobs(load_config(write_config(tmp_path)))
    assert [(j.stem, j.gamma) for j in jobs] == [("fedcomloc", 0.1)]


def test_cell_alpha_override(tmp_path):
    cells = '\n[[cells]]\nlabel = "a01"\nalpha = 0.1\n\n[[cells]]\nlabel = "a10"\nalpha = 1.0\n'
    jobs = expand_jobs(load_config(write_config(tmp_path, cells=cells)))
    assert [j.alpha for j in jobs] == [0.1, 1.0]


# --- end-to-end ----------------------------------------------------------------------


def test_run_experiment_writes_artifacts(tmp_path):
    path = write_config(tmp_path, cells='\n[[cells]]\nlabel = "base"\n')
    assert run_experiment(path, quiet=True) == 0
    out = tmp_path / "out"
    csv_path = out / "base.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) >= 3
    comm = [int(line.split(",")[1]) for line in lines[1:]]
    assert comm == sorted(comm)
    payload = json.loads((out / "base.json").read_text())
    assert payload["config"]["cell"] == "base"
    assert payload["config"]["fed"]["T"] == 30
    assert "best_accuracy" in payload["summary"]
    stats = list(out.glob("partition_stats_alpha*.csv"))
    assert len(stats) == 1
    assert stats[0].read_text().startswith("client_id,class_id,count")
    assert not list(out.glob("*.tmp"))


def test_run_experiment_is_deterministic_across_workers(tmp_path):
    cells = '\n[[cells]]\nlabel = "c1"\n\n[[cells]]\nlabel = "c2"\np = 0.2\n\n[[cells]]\nlabel = "c3"\nalgorithm = "fedavg"\n'
    path = write_config(tmp_path, cells=cells)
    assert run_experiment(path, out=str(tmp_path / "seq"), quiet=True, workers=1) == 0
    assert run_experiment(path, out=str(tmp_path / "par"), quiet=True, workers=3) == 0
    for name in ("c1.csv", "c2.csv", "c3.csv", "c1.json"):
        assert (tmp_path / "seq" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_grid_search_produces_five_cells(tmp_path):
    path = write_config(tmp_path, grid="grid = [0.005, 0.01, 0.05, 0.1, 0.5]")
    assert run_experiment(path, quiet=True) == 0
    assert len(list((tmp_path / "out").glob("fedcomloc__gamma*.csv"))) == 5


def test_run_experiment_on_idx_files(tmp_path):
    import struct

    import numpy as np

    rng = np.random.default_rng(0)

    def write_pair(stem, n):
        pixels = rng.integers(0, 256, size=(n, 4, 3), dtype=np.uint8)
        labels = rng.integers(0, 3, size=n, dtype=np.uint8)
        (tmp_path / f"{stem}-images").write_bytes(struct.pack(">IIII", 0x803, n, 4, 3) + pixels.tobytes())
        (tmp_path / f"{stem}-labels").write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())

    write_pair("train", 120)
    write_pair("t10k", 40)
    config = f"""
output_dir = "{tmp_path / 'out'}"
[dataset]
kind = "mnist_idx"
train_images = "train-images"
train_labels = "train-labels"
test_images = "t10k-images"
test_labels = "t10k-labels"
[partition]
n_clients = 5
alpha = 0.5
[model]
kind = "logreg"
[fed]
sample_size = 3
p = 0.5
gamma = 0.1
iterations = 20
batch_size = 8
seed = 2
"""
    path = tmp_path / "exp.toml"
    path.write_text(config)
    assert run_experiment(path, quiet=True) == 0
    lines = (tmp_path / "out" / "fedcomloc.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    first = lines[1].split(",")
    assert abs(float(first[6]) - 1.0986122886681098) < 1e-9  # ln(3): three balanced-ish classes


def test_failed_cell_is_reported(tmp_path, capsys):
    config = """
output_dir = "{out}"
[dataset]
kind = "mnist_idx"
train_images = "missing-images"
train_labels = "missing-labels"
test_images = "missing-images"
test_labels = "missing-labels"
[partition]
n_clients = 4
alpha = 0.5
[model]
kind = "logreg"
[fed]
sample_size = 2
""".format(out=tmp_path / "out")
    path = tmp_path / "exp.toml"
    path.write_text(config)
    assert run_experiment(path, quiet=True) == 1
    err = capsys.readouterr().err
    assert "failed" in err and "missing-images" in err


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.toml")]) == 2
    assert "invalid config" in capsys.readouterr().err

    bad = tmp_path / "bad.toml"
    bad.write_text(TINY_CONFIG.format(out=tmp_path / "o", grid="", cells="").replace("p = 0.5", "p = 0.0"))
    assert main(["--config", str(bad)]) == 2
    assert "fed.p" in capsys.readouterr().err

    good = write_config(tmp_path)
    assert main(["--config", str(good), "--quiet"]) == 0
    summary_run = main(["--config", str(good)])
    assert summary_run == 0
    assert "best_acc" in capsys.readouterr().out
