"""
End-to-end tests of the command line on a tiny configuration.
"""
import json

import pytest

from conftest import TINY_MODEL
from main import run
from persistence.run_files import read_csv

PLAIN_PROMPT = "a photo of a red circle on a white background"


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "tiny.json"
    path.write_text(json.dumps({
        "model": TINY_MODEL,
        "pretrain": {"steps": 2, "batch_size": 1, "corpus_size": 64},
        "train": {"batch_size": 1, "grad_accum": 1},
        "sample": {"steps": 2},
        "analysis": {"geometry_layers": [0]},
    }), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, tiny_config):
    out = tmp_path_factory.mktemp("pretrain")
    assert run(["pretrain", "--config", str(tiny_config), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def inverted(tmp_path_factory, tiny_config, pretrained):
    out = tmp_path_factory.mktemp("invert")
    code = run(["invert", "--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
                "--steps", "0", "--mode", "neti_bypass", "--out", str(out)])
    assert code == 0
    return out


def test_info_reports_paper_counts(capsys):
    assert run(["info", "--preset", "paper", "--no-bypass"]) == 0
    assert "parameters: 464384" in capsys.readouterr().out
    assert run(["info", "--preset", "paper", "--bypass"]) == 0
    assert "parameters: 563456" in capsys.readouterr().out
    assert run(["info", "--preset", "paper", "--no-bypass", "--keep-units", "32"]) == 0
    assert "parameters: 390656" in capsys.readouterr().out


def test_usage_errors(tmp_path):
    assert run(["--help"]) == 0
    assert run(["info", "--no-such-flag"]) == 2
    assert run(["info", "--config", str(tmp_path / "missing.json")]) == 2
    assert run(["info", "--keep-units", "0"]) == 1


def test_pretrain_writes_bundle_and_trace(pretrained):
    assert (pretrained / "weights" / "bundle" / "bundle.neti").exists()
    assert (pretrained / "config.json").exists()
    assert len(read_csv(pretrained / "trace.csv")) == 2
    assert (pretrained / "trace.png").exists()


def test_bundle_must_match_the_config(tmp_path, pretrained):
    code = run(["invert", "--bundle", str(pretrained / "weights" / "bundle"), "--steps", "0",
                "--out", str(tmp_path)])
    assert code == 2


def test_invert_records_its_run(inverted):
    assert (inverted / "weights" / "concept.neti").exists()
    recorded = json.loads((inverted / "config.json").read_text(encoding="utf-8"))
    assert recorded["command"] == "invert"
    assert recorded["config"]["train"]["steps"] == 0
    assert recorded["config"]["train"]["mode"] == "neti_bypass"
    assert "bundle" in recorded["inputs"]


def test_sampling_twice_gives_identical_files(tmp_path, tiny_config, pretrained, inverted):
    args = ["sample", "--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
            "--mapper", str(inverted / "weights" / "concept.neti"), "--seed", "4"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "samples" / "sample_seed4_00.ppm").read_bytes()
    assert first == (tmp_path / "b" / "samples" / "sample_seed4_00.ppm").read_bytes()
    assert first.startswith(b"P6\n32 32\n255\n")


def test_sampling_a_plain_prompt(tmp_path, tiny_config, pretrained):
    code = run(["sample", "--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
                "--prompt", PLAIN_PROMPT, "--num-samples", "2", "--out", str(tmp_path)])
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "samples").glob("*.ppm")) == [
        "sample_seed0_00.ppm", "sample_seed0_01.ppm", "sample_seed0_grid.ppm",
    ]


def test_placeholder_prompt_without_a_concept_fails(tmp_path, tiny_config, pretrained):
    code = run(["sample", "--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
                "--out", str(tmp_path)])
    assert code == 1


def test_decompose_and_eval(tmp_path, tiny_config, pretrained, inverted):
    common = ["--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
              "--mapper", str(inverted / "weights" / "concept.neti")]
    assert run(["analyze", "decompose", *common, "--fixed-t", "500", "--out", str(tmp_path / "d")]) == 0
    assert [r["t"] for r in read_csv(tmp_path / "d" / "decompose.csv")] == ["500"]

    assert run(["eval", *common, "--num-samples", "1", "--out", str(tmp_path / "e")]) == 0
    metrics = {r["metric"] for r in read_csv(tmp_path / "e" / "metrics.csv")}
    assert {"image_similarity", "baseline_similarity", "norm_median"} <= metrics


def test_sweep_writes_scores_and_plot(tmp_path, tiny_config, pretrained, inverted):
    code = run(["analyze", "sweep", "--config", str(tiny_config), "--bundle", str(pretrained / "weights" / "bundle"),
                "--mapper", str(inverted / "weights" / "concept.neti"), "--ks", "4", "16", "--out", str(tmp_path)])
    assert code == 0
    assert [r["k"] for r in read_csv(tmp_path / "sweep.csv")] == ["4", "16"]
    assert (tmp_path / "sweep.png").exists()
