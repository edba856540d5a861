import math

import numpy as np
import pytest

import fticir


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    fticir.write_toy_corpus(str(root), count=24)
    code, _, err = fticir.run_cli([
        "train", "--images", str(root / "images"), "--captions", str(root / "captions.tsv"),
        "--out", str(root / "run"), "--quiet",
        "--set", "train.epochs=1", "--set", "train.batch_size=12",
    ])
    assert code == 0, err
    code, _, err = fticir.run_cli([
        "index", "--images", str(root / "images"), "--ckpt", str(root / "run" / "last.bin"),
        "--out", str(root / "toy.idx"), "--created-at", "0",
    ])
    assert code == 0, err
    return root


def test_templates():
    full, subj, attr = fticir.split_caption("Three dogs sitting in front of a door.")
    assert (subj, attr) == ("three dogs", "sitting in front of a door")
    assert fticir.standardized_caption(subj, attr) == "a photo of three dogs with sitting in front of a door."
    p = "⟨P⟩"
    assert fticir.image_template(2) == f"a photo of {p} with {p} {p}."
    assert fticir.query_template(1, "is red") == f"a photo of {p} with {p} but is red."


def test_filter_fallback():
    local = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    sel = fticir.select_attributes(local, np.array([0.0, -1.0]), k=2, epsilon=0.5)
    assert sel["fallback"]
    assert sel["retained"] == [sel["topk"][0]]


def test_losses():
    rng = np.random.default_rng(0)
    assert fticir.contrastive_loss(rng.normal(size=(1, 4)), rng.normal(size=(1, 4))) == 0.0
    assert fticir.orthogonal_loss(np.eye(3, 5)) == 0.0
    w = np.zeros((2, 3))
    w[0, 0] = 2.0
    assert math.isclose(fticir.orthogonal_loss(w), 10.0)


def test_metrics():
    rankings = [["a", "x", "b", "y", "z"]]
    assert math.isclose(fticir.map_at_k(rankings, [["a", "b"]], 5), 5 / 6)
    assert fticir.recall_at_k(rankings, [["b"]], 2) == 0.0
    assert fticir.subset_recall_at_k(rankings, [["b"]], [["b", "y"]], 1) == 1.0


def test_searcher_matches_cli(workspace):
    s = fticir.Searcher(str(workspace / "run" / "last.bin"), str(workspace / "toy.idx"), str(workspace / "images"))
    assert len(s) == 24
    hits = s.search("img_003", "is red", top_k=5)
    assert len(hits) == 5
    code, out, _ = fticir.run_cli([
        "search", "--index", str(workspace / "toy.idx"), "--ckpt", str(workspace / "run" / "last.bin"),
        "--images", str(workspace / "images"), "--ref", "img_003", "--mod", "is red", "--top-k", "5",
    ])
    assert code == 0
    assert [line.split("\t")[1] for line in out.splitlines()] == [h[0] for h in hits]
    with pytest.raises(fticir.Error, match="input"):
        s.search("img_999", "is red")


def test_png_reference_equals_ppm(workspace):
    from PIL import Image

    ppm = workspace / "images" / "img_005.ppm"
    png = workspace / "ref.png"
    Image.open(ppm).save(png)
    base = [
        "search", "--index", str(workspace / "toy.idx"), "--ckpt", str(workspace / "run" / "last.bin"),
        "--mod", "has a blue background", "--top-k", "5", "--ref-image",
    ]
    code_ppm, out_ppm, _ = fticir.run_cli(base + [str(ppm)])
    code_png, out_png, err = fticir.run_cli(base + [str(png)])
    assert code_ppm == 0
    if code_png != 0 and "PNG" in err.upper():
        pytest.skip("built without PNG support")
    assert code_png == 0, err
    assert out_png == out_ppm
