import dataclasses

import numpy as np
import pytest

from epigraph import nn
from epigraph.errors import SchemaVersionError, ValidationError
from epigraph.geom import Pose, quat_from_axis_angle
from epigraph.graph import GraphParams
from epigraph.losses import LossWeights
from epigraph.synth import CorrespondenceSet, generate_scene
from epigraph.train import (
    TrainConfig,
    evaluate,
    graph_params_from_meta,
    split_dataset,
    train,
    weights_from_meta,
    write_report,
)


def small_pose(seed=0, rot_deg=6.0):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=3)
    t = 0.8 * t / np.linalg.norm(t)
    if t[2] < 0:
        t = -t
    return Pose(quat_from_axis_angle(rng.normal(size=3), np.deg2rad(rot_deg)), t)


def tiny_dataset(n_pairs=6, n_points=40, seed=100):
    return [generate_scene(seed + i, n_points, (3, 10), small_pose(seed + i))
            for i in range(n_pairs)]


def tiny_config(epochs=3, seed=0, **kw):
    return TrainConfig(model=nn.preset_config("GIN_SumPool", hidden=16),
                       epochs=epochs, seed=seed, **kw)


class TestSplit:
    def test_sizes(self):
        train_set, val_set = split_dataset(list(range(10)), 0.8, 0)
        assert (len(train_set), len(val_set)) == (8, 2)

    def test_same_seed_same_split(self):
        a = split_dataset(list(range(20)), 0.8, 5)
        b = split_dataset(list(range(20)), 0.8, 5)
        assert a == b

    def test_disjoint_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 50))
            frac = float(rng.uniform(0.1, 0.9))
            tr, va = split_dataset(list(range(n)), frac, int(rng.integers(0, 99)))
            assert set(tr) | set(va) == set(range(n))
            assert set(tr) & set(va) == set()
            assert len(tr) >= 1 and len(va) >= 1

    def test_too_small(self):
        with pytest.raises(ValidationError):
            split_dataset([1], 0.8, 0)


class TestTrainLoop:
    def test_zero_lr_leaves_params_unchanged(self, tmp_path):
        data = tiny_dataset()
        cfg = tiny_config(epochs=2, lr=0.0)
        ckpt = tmp_path / "ckpt.txt"
        train(cfg, data, ckpt, final_checkpoint_path=tmp_path / "final.txt")
        params, model_cfg, _ = nn.load_checkpoint(tmp_path / "final.txt")
        init = nn.init_params(model_cfg, np.random.default_rng(
            np.random.SeedSequence([0, __import__("zlib").crc32(b"init")])))
        for k in init.tensors:
            assert np.array_equal(params.tensors[k], init.tensors[k])

    def test_bit_identical_reports_same_seed(self, tmp_path):
        data = tiny_dataset()
        r1 = train(tiny_config(seed=3), data, tmp_path / "a.txt")
        r2 = train(tiny_config(seed=3), data, tmp_path / "b.txt")
        assert len(r1.epochs) == len(r2.epochs)
        for s1, s2 in zip(r1.epochs, r2.epochs):
            assert dataclasses.astuple(s1.train_mean) == dataclasses.astuple(s2.train_mean)
            assert dataclasses.astuple(s1.val_mean) == dataclasses.astuple(s2.val_mean)
        assert r1.best_epoch == r2.best_epoch
        assert r1.best_val_total == r2.best_val_total
        assert open(tmp_path / "a.txt").read() == open(tmp_path / "b.txt").read()

    def test_checkpoint_tracks_running_min(self, tmp_path):
        data = tiny_dataset(8)
        report = train(tiny_config(epochs=5, seed=1), data, tmp_path / "c.txt")
        vals = [s.val_mean.total for s in report.epochs]
        assert report.best_val_total == min(vals)
        assert report.best_epoch == int(np.argmin(vals)) + 1
        _, _, meta = nn.load_checkpoint(tmp_path / "c.txt")
        assert float(meta["val_total"]) == min(vals)
        assert int(meta["epoch"]) == report.best_epoch

    def test_skip_accounting(self, tmp_path):
        data = tiny_dataset(6)
        # a pair with 7 correspondences cannot seed E0 and must be skipped
        broken = generate_scene(999, 7, (3, 10), small_pose(999))
        data = data + [broken]
        report = train(tiny_config(epochs=2, seed=2), data, tmp_path / "d.txt")
        train_n, val_n = 6, 1  # split of 7 at 0.8
        for s in report.epochs:
            assert s.processed + s.skipped == train_n
            assert s.val_processed + s.val_skipped == val_n

    def test_loss_decreases_on_overfit_sample(self, tmp_path):
        data = tiny_dataset(6, seed=300)
        report = train(tiny_config(epochs=40, seed=4, lr=1e-3), data,
                       tmp_path / "e.txt")
        first = report.epochs[0].train_mean.total
        last = report.epochs[-1].train_mean.total
        assert last < first

    def test_missing_gt_rejected(self, tmp_path):
        corr = generate_scene(1, 20, (3, 10), small_pose(1))
        bare = CorrespondenceSet(corr.p1, corr.p2, corr.confidence,
                                 corr.intrinsics, corr.width, corr.height,
                                 gt_relative=None)
        with pytest.raises(ValidationError):
            train(tiny_config(), [bare, bare], tmp_path / "f.txt")

    def test_colliding_pair_ids_get_distinct_graphs(self, tmp_path):
        # scenes built without explicit pair ids share the default one; the
        # build cache must still keep their graphs apart
        data = tiny_dataset(4, seed=42)
        assert len({c.pair_id for c in data}) == 1
        train(tiny_config(epochs=1, seed=0), data, tmp_path / "c.txt")
        res = evaluate(tmp_path / "c.txt", data)
        qs = {tuple(p.q) for p, _, _ in res}
        assert len(qs) == len(data)

    def test_prebuild_workers_same_result(self, tmp_path):
        data = tiny_dataset(6, seed=400)
        r1 = train(tiny_config(seed=5), data, tmp_path / "g1.txt")
        r2 = train(tiny_config(seed=5, prebuild_workers=4), data, tmp_path / "g2.txt")
        assert open(tmp_path / "g1.txt").read() == open(tmp_path / "g2.txt").read()
        assert r1.best_val_total == r2.best_val_total


class TestEvaluate:
    def test_idempotent(self, tmp_path):
        data = tiny_dataset(6, seed=500)
        train(tiny_config(seed=6), data, tmp_path / "h.txt")
        r1 = evaluate(tmp_path / "h.txt", data)
        r2 = evaluate(tmp_path / "h.txt", data)
        for (p1, g1, b1), (p2, g2, b2) in zip(r1, r2):
            assert np.array_equal(p1.q, p2.q) and np.array_equal(p1.t, p2.t)
            assert b1.total == b2.total

    def test_empty_dataset_empty_result(self, tmp_path):
        data = tiny_dataset(6, seed=600)
        train(tiny_config(seed=7), data, tmp_path / "i.txt")
        assert evaluate(tmp_path / "i.txt", []) == []

    def test_meta_round_trip_helpers(self, tmp_path):
        gp = GraphParams(k=4, tau=2e-4, variant="soft", symmetrize=False,
                         radius=0.25, e0_seed=9)
        weights = LossWeights(0.5, 1.5, 2.0, 0.0)
        cfg = tiny_config(graph=gp, weights=weights)
        data = tiny_dataset(6, seed=700)
        train(cfg, data, tmp_path / "j.txt")
        _, _, meta = nn.load_checkpoint(tmp_path / "j.txt")
        assert graph_params_from_meta(meta) == gp
        assert weights_from_meta(meta) == weights

    def test_schema_error_on_stripped_meta(self, tmp_path):
        data = tiny_dataset(6, seed=800)
        train(tiny_config(seed=8), data, tmp_path / "k.txt")
        text = open(tmp_path / "k.txt").read().splitlines()
        text = [ln for ln in text if not ln.startswith("meta graph.")]
        (tmp_path / "broken.txt").write_text("\n".join(text) + "\n")
        with pytest.raises(SchemaVersionError):
            evaluate(tmp_path / "broken.txt", data)


def test_write_report_deterministic(tmp_path):
    data = tiny_dataset(6, seed=900)
    report = train(tiny_config(seed=9), data, tmp_path / "l.txt")
    write_report(report, tmp_path / "r1.txt")
    write_report(report, tmp_path / "r2.txt")
    assert open(tmp_path / "r1.txt").read() == open(tmp_path / "r2.txt").read()
    text = open(tmp_path / "r1.txt").read()
    assert text.startswith("# epigraph-train-report v1")
    assert f"best_epoch {report.best_epoch}" in text
