import numpy as np
import pytest

import geolat


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_umeyama_recovers_similarity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(50, 3))
    rot = random_rotation(rng)
    dst = 1.7 * src @ rot.T + np.array([0.3, -1.0, 2.0])
    t = geolat.umeyama_align(src, dst)
    assert t["scale"] == pytest.approx(1.7, abs=1e-9)
    np.testing.assert_allclose(t["rotation"], rot, atol=1e-9)
    np.testing.assert_allclose(t["translation"], [0.3, -1.0, 2.0], atol=1e-9)


def test_umeyama_rejects_degenerate_input():
    line = np.outer(np.arange(5.0), [1.0, 2.0, -1.0])
    with pytest.raises(geolat.DegenerateConfiguration):
        geolat.umeyama_align(line, line)
    with pytest.raises(geolat.InvalidInput):
        geolat.umeyama_align(line, line[:4])


def test_farthest_point_sample_matches_numpy():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(200, 3))
    picked = [0]
    dist = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(19):
        dist[picked] = -1.0
        nxt = int(np.argmax(dist))
        picked.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    assert geolat.farthest_point_sample(pts, 20, 0) == picked


def test_chamfer_matches_numpy():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(120, 3))
    b = rng.normal(size=(90, 3))
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    r = geolat.chamfer_metrics(a, b)
    assert r["accuracy"] == pytest.approx(d.min(axis=1).mean(), rel=1e-12)
    assert r["completeness"] == pytest.approx(d.min(axis=0).mean(), rel=1e-12)
    assert r["chamfer"] == pytest.approx((r["accuracy"] + r["completeness"]) / 2)


def test_scene_and_pose_metrics():
    s = geolat.sample_scene(5, resolution=32, frames=5)
    assert s["images"].shape == (5, 32, 32, 3)
    assert s["depths"].shape == (5, 32, 32)
    assert s["cameras"].shape == (5, 9)
    assert np.all(s["depths"][s["validity"]] > 0)
    assert geolat.pose_auc(s["cameras"], s["cameras"]) == pytest.approx(1.0)
    assert geolat.relative_pose_errors(s["cameras"], s["cameras"]).shape == (10, 4)
    pts = s["pointmaps"][s["validity"]].astype(np.float64)
    e = geolat.evaluate_geometry(2.0 * pts + 1.0, pts, sample_k=300)
    assert e["chamfer"] < 1e-6
    assert geolat.psnr(s["images"], s["images"]) == 99.0


def test_config_overrides_change_the_hash():
    base = geolat.config_hash()
    assert geolat.config_hash(overrides=["adapter.lambda2=0.5"]) != base
    assert geolat.load_config(overrides=["adapter.lambda2=0.5"])["adapter"]["lambda2"] == 0.5
    with pytest.raises(geolat.InvalidInput):
        geolat.load_config(overrides=["adapter.lamda2=0.5"])


def test_cli_usage_exit_codes():
    assert geolat.cli([])[0] == 1
    assert geolat.cli(["--help"])[0] == 0


def test_quick_pipeline_end_to_end(tmp_path):
    data = tmp_path / "data"
    handle = geolat.make_dataset(data, count=6, seed=3, resolution=64, frames=9)
    assert len(handle["train"]) + len(handle["test"]) == 6
    overrides = [
        f'data.root="{data}"',
        "data.count=6",
        "data.seed=3",
        f'run_dir="{tmp_path / "runs"}"',
        "codec.steps=2",
        "surrogate.steps=2",
        "surrogate.extra_scenes=1",
        "surrogate.heldout_scenes=1",
        "adapter.steps=2",
        "diffusion.steps=2",
        "sampler.steps=2",
    ]
    pipe = geolat.Pipeline(overrides=overrides)
    with pytest.raises(geolat.MissingPrerequisite):
        pipe.run_stage("adapter")
    for stage in ["codec", "surrogate", "prior", "adapter", "diffusion"]:
        rec = pipe.run_stage(stage)
        assert rec["status"] == "complete"
        assert len(rec["config_hash"]) == 64
    assert pipe.run_stage("codec")["status"] == "cached"

    scene_id = handle["train"][0]
    scene = geolat.load_scene(data / "train" / scene_id)
    r = pipe.generate([scene["images"][0]], cameras=scene["cameras"], descriptor=scene["descriptor"], scene=scene_id)
    assert r.frames.shape == (9, 64, 64, 3)
    assert r.cameras.shape == (9, 9)
    assert r.final_geometry_deviation() <= 1e-6
    assert r.provenance["mode"] == "first-frame"
    again = pipe.generate([scene["images"][0]], cameras=scene["cameras"], descriptor=scene["descriptor"], scene=scene_id)
    np.testing.assert_array_equal(r.frames, again.frames)

    out = tmp_path / "results" / scene_id
    r.write(out)
    back = geolat.read_result(out)
    assert back.provenance == r.provenance
    report = geolat.evaluate_directory(tmp_path / "results", data / "train", sample_k=200)
    assert len(report["rows"]) == 1
    assert report["config_hash"] == pipe.config_hash

    rec = pipe.reconstruct(list(scene["images"]), scene=scene_id)
    assert rec.provenance["mode"] == "all-frames"
    gates = pipe.inspect_latents("adapter")
    assert len(gates["mean_deviation_sigma"]) == 8
