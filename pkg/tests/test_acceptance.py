"""Acceptance criteria 1-7, each at its stated tolerance and runtime limit.

Every test prints one ``criterion N: PASS|FAIL`` line straight to the
terminal (bypassing capture) so the suite log doubles as a report.
"""
import contextlib
import time
import warnings

import numpy as np
import pytest

from convisa.benchmark import BenchmarkConfig, run_benchmark
from convisa.encoding import (GmmModel, encode_video, fisher_vector, fit_gmm, mean_accuracy)
from convisa.handcrafted import BinningBank, describe_patch, oriented_binning
from convisa.isa import (IsaModel, IsaTrainConfig, PcaModel, group_l1_norm, grouping_matrix,
                         groups_from_matrix, isa_activation, isa_gradient, isa_objective,
                         orthonormalize, reconstruct, train_isa)
from convisa.tensor_core import (CascadeSpec, Conv, Pool, cascade_eval, conv3d, local_pool)
from convisa.video import SynthConfig
from oracles import conv_loop, macc_loop, nonlin_loop, numeric_grad, pool_loop

SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(n, capsys, title, prior=0.0):
    """Time the block and print its verdict whether it passes or fails.

    ``prior`` adds time already spent in fixtures.
    """
    notes = []
    t0 = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    finally:
        dt = prior + time.perf_counter() - t0
        detail = "; ".join(notes)
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {title} ({dt:.1f} s)"
                  + (f" | {detail}" if detail else ""))


def identity_pca(n):
    return PcaModel(np.zeros(n), np.eye(n), np.ones(n), whiten=False)


# --- 1 -------------------------------------------------------------------

def test_criterion_1_identities(capsys):
    with criterion(1, capsys, "group-norm and reconstruction identities") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        worst_sum = worst_rec = 0.0
        for _ in range(1000):
            d, g = rng.integers(1, 6), rng.integers(1, 5)
            m = d * g
            W = orthonormalize(rng.standard_normal((m, m)))
            model = IsaModel(W, grouping_matrix(d, g), identity_pca(m), eps=0.0)
            x = rng.standard_normal(m) * 10 ** rng.uniform(-3, 3)
            p = isa_activation(x, model, eps=0.0)
            gl1 = group_l1_norm(W @ x, groups_from_matrix(model.V))
            worst_sum = max(worst_sum, abs(p.sum() - gl1) / max(gl1, 1e-300))
            worst_rec = max(worst_rec, np.abs(reconstruct(W @ x, model) - x).max()
                            / max(np.abs(x).max(), 1.0))
        elapsed = time.perf_counter() - t0
        notes += [f"max rel |sum p - ||Wx||_G1| = {worst_sum:.2e}",
                  f"max reconstruction error = {worst_rec:.2e}"]
        # identical algebra, so only summation order separates the two sides
        assert worst_sum <= 1e-12
        assert worst_rec < 1e-6
        assert elapsed < 5


# --- 2 -------------------------------------------------------------------

def test_criterion_2_isa_training(capsys):
    with criterion(2, capsys, "ISA training invariants") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        # sparse sources mixed linearly give the objective something to find
        S = rng.laplace(size=(3000, 32)) * np.repeat(rng.uniform(0.5, 2, (3000, 8)), 4, axis=1)
        X = S @ rng.standard_normal((32, 32))
        cfg = IsaTrainConfig(group_size=4, latent_dim=16, out_dim=4, epochs=300, learning_rate=0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = train_isa(X, cfg)
        h = np.asarray(model.history)
        ortho = np.abs(model.W @ model.W.T - np.eye(16)).max()
        rises = np.diff(h).max()
        worst_grad = 0.0
        for k in range(20):
            r = np.random.default_rng(100 + k)
            d, g = r.integers(1, 4), r.integers(1, 4)
            m, n = d * g, r.integers(d * g, 10)
            mdl = IsaModel(r.standard_normal((m, n)), grouping_matrix(d, g), identity_pca(n), 1e-8)
            D = r.standard_normal((6, n))
            G = isa_gradient(D, mdl)
            N = numeric_grad(lambda W: isa_objective(D, IsaModel(W, mdl.V, mdl.pca, mdl.eps)),
                             mdl.W, h=1e-5)
            worst_grad = max(worst_grad, np.abs(G - N).max() / np.abs(N).max())
        elapsed = time.perf_counter() - t0
        notes += [f"||WW^T - I||_max = {ortho:.2e}", f"epochs {len(h) - 1}",
                  f"objective {h[0]:.1f} -> {h[-1]:.1f}, largest rise {max(rises, 0):.2e}",
                  f"worst gradient rel error {worst_grad:.2e}"]
        assert ortho < 1e-6
        assert rises <= 1e-6 * h[0]
        assert h[-1] < h[0]
        assert worst_grad <= 1e-3
        assert elapsed < 60


# --- 3 -------------------------------------------------------------------

def _f32(a):
    return np.asarray(a, np.float32).astype(np.float64)


def _cascade_loop(x, w1, w2, size):
    """Loop oracle with the float32 storage the cascade contract specifies between layers."""
    h = _f32(nonlin_loop(_f32(conv_loop(x, w1)), "square"))
    h = _f32(pool_loop(h, "local_sum", size))
    h = _f32(nonlin_loop(_f32(conv_loop(h, w2)), "relu"))
    return h.sum(axis=(0, 1, 2))


def test_criterion_3_conv_pool_oracles(capsys):
    with criterion(3, capsys, "conv / pool / cascade loop oracles") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        worst = {"conv": 0.0, "pool": 0.0, "cascade": 0.0}

        def rel(a, b):
            return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-30), initial=0.0))

        for _ in range(40):
            N, M, T, C = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 5), rng.integers(1, 4)
            x = rng.standard_normal((N, M, T, C)).astype(np.float32)
            w = rng.standard_normal((rng.integers(1, N + 1), rng.integers(1, M + 1),
                                     rng.integers(1, T + 1), C, rng.integers(1, 4)))
            for pad in ("valid", "same"):
                worst["conv"] = max(worst["conv"], rel(conv3d(x, w, pad), conv_loop(x, w, pad)))
            size = tuple(int(rng.integers(1, s + 1)) for s in (4, 4, 3))
            for kind in ("local_sum", "local_max"):
                worst["pool"] = max(worst["pool"], rel(local_pool(x, kind, size), pool_loop(x, kind, size)))
        for _ in range(10):
            x = rng.standard_normal((8, 8, 4, 3)).astype(np.float32)
            w1 = rng.standard_normal((3, 3, 2, 3, 4))
            w2 = rng.standard_normal((2, 2, 1, 4, 2))
            spec = CascadeSpec([Conv(w1, "square"), Pool("local_sum", (2, 2, 1)), Conv(w2, "relu"),
                                Pool("global_sum")])
            worst["cascade"] = max(worst["cascade"],
                                   rel(cascade_eval(spec, x), _cascade_loop(x, w1, w2, (2, 2, 1))))
        elapsed = time.perf_counter() - t0
        notes += [f"max rel error {k} {v:.2e}" for k, v in worst.items()]
        assert max(worst.values()) <= 1e-6
        assert elapsed < 10


# --- 4 -------------------------------------------------------------------

def test_criterion_4_handcrafted_analytics(capsys):
    with criterion(4, capsys, "handcrafted-net analytics") as notes:
        hog = describe_patch("HOG", np.full((32, 32, 15, 1), 0.6)).values
        hof = describe_patch("HOF", np.zeros((32, 32, 15, 2))).values.reshape(-1, 9)
        r2 = np.sqrt(2) / 2
        expect = np.array([1, r2, 0, 0, 0, 0, 0, r2])
        worst = 0.0
        for k in range(8):
            a = 2 * np.pi * k / 8
            g = np.array([np.cos(a), np.sin(a)]).reshape(1, 1, 1, 2)
            got = oriented_binning(g, BinningBank.even(8)).reshape(-1)
            worst = max(worst, np.abs(got - np.roll(expect, k)).max())
        notes += [f"max |HOG| {np.abs(hog).max():.1e}",
                  f"HOF mass outside zero bin {hof[:, :8].sum():.1e}",
                  f"binning error {worst:.1e}"]
        assert not hog.any()
        assert not hof[:, :8].any() and (hof[:, 8] > 0).all()
        assert worst <= 1e-6


# --- 5 -------------------------------------------------------------------

def test_criterion_5_encoding(capsys):
    with criterion(5, capsys, "encoding suite") as notes:
        rng = np.random.default_rng(5)
        g = GmmModel([1.0], rng.standard_normal((1, 6)), rng.uniform(0.2, 3, (1, 6)))
        fv = fisher_vector(np.repeat(g.means, 11, axis=0), g)
        fv_err = max(np.abs(fv[:6]).max(), np.abs(fv[6:] + 1 / np.sqrt(2)).max())
        ll_drop = 0.0
        for seed in range(10):
            X = np.concatenate([rng.standard_normal((100, 4)) + 4 * rng.standard_normal(4)
                                for _ in range(3)])
            ll = np.asarray(fit_gmm(X, 3, seed=seed).log_likelihood)
            ll_drop = max(ll_drop, float(np.max(-np.diff(ll) / np.abs(ll[:-1]), initial=0.0)))
        norm_err = 0.0
        for _ in range(50):
            blocks = {k: rng.standard_normal(rng.integers(1, 40)) * 10 ** rng.uniform(-4, 4)
                      for k in ("LOP", "LOF", "HOG")}
            norm_err = max(norm_err, abs(np.linalg.norm(encode_video(blocks).vector) - 1))
        macc_err = 0.0
        for _ in range(200):
            n = rng.integers(1, 80)
            truth, pred = rng.integers(0, 5, n), rng.integers(0, 5, n)
            macc_err = max(macc_err, abs(mean_accuracy(pred, truth) - macc_loop(pred, truth)))
        notes += [f"FV closed-form error {fv_err:.1e}", f"worst EM rel drop {ll_drop:.1e}",
                  f"unit-norm error {norm_err:.1e}", f"MAcc vs loop {macc_err:.1e}"]
        assert fv_err <= 1e-6
        assert ll_drop <= 1e-9
        assert norm_err <= 1e-6
        assert macc_err <= 1e-12


# --- 6 and 7: synthetic benchmark ----------------------------------------

def bench_cfg(seed):
    return BenchmarkConfig(synth=SynthConfig(classes=4, clips_per_class=40, width=64, height=64,
                                             frames=30, seed=seed), seed=seed)


@pytest.fixture(scope="module")
def bench_runs():
    runs, t0 = {}, time.perf_counter()
    for s in SEEDS:
        runs[s] = run_benchmark(bench_cfg(s))
    return runs, time.perf_counter() - t0


def test_criterion_6_two_stream_ordering(capsys, bench_runs):
    runs, elapsed = bench_runs
    with criterion(6, capsys, "two-stream ordering on the synthetic benchmark", elapsed) as notes:
        def avg(key):
            return 100 * float(np.mean([runs[s][key] for s in SEEDS]))

        corr = [(runs[s]["corr_pixels"], runs[s]["corr_flow"]) for s in SEEDS]
        lof_gap = avg("LOF_pooling") - avg("LOF_projection")
        lop_gap = avg("LOP_projection") - avg("LOP_pooling")
        isa_plus, best_other = avg("combined_isa+"), max(avg("combined_pca"), avg("combined_isa"))
        notes += [
            "corr pixels/flow " + ", ".join(f"{p:.3f}/{f:.3f}" for p, f in corr),
            f"LOF pool-proj {lof_gap:+.1f} pts", f"LOP proj-pool {lop_gap:+.1f} pts",
            f"ISA+ {isa_plus:.1f} vs max(PCA, ISA) {best_other:.1f}",
            f"3 seeds in {elapsed:.0f} s",
        ]
        assert all(p > f for p, f in corr)
        assert lof_gap >= 3.0
        assert lop_gap >= 3.0
        assert isa_plus >= best_other - 1.0
        assert elapsed < 30 * 60


def test_criterion_7_end_to_end(capsys, bench_runs):
    runs, _ = bench_runs
    with criterion(7, capsys, "end-to-end sanity and seeded rerun") as notes:
        first = runs[0]
        again = run_benchmark(bench_cfg(0))
        notes += [f"MAcc {100 * first['combined_isa+']:.1f} (chance 25.0)",
                  f"encoded sha256 {first['hashes']['encoded'][:12]}"]
        assert first["combined_isa+"] >= 0.5
        assert again["hashes"] == first["hashes"]
        assert again["predictions"] == first["predictions"]
        for key, value in first.items():
            if key != "prepare_seconds":
                assert again[key] == value, key
