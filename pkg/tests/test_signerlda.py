import numpy as np
import pytest

from signrec.signerlda import (
    LdaTransform,
    accumulate_scatter,
    align_and_resample,
    dtw_align,
    fit_transform,
    project,
    resample_linear,
    solve_transform,
    warp_to_reference,
)


def brute_force_dtw(ref, query):
    """Oracle: minimum cost over every monotone path, by recursion."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if ref.ndim == 2 and ref.shape[0] == 1 and len(ref) != len(query):
        pass
    n, m = len(ref), len(query)
    local = np.array([[np.sum((ref[i] - query[j]) ** 2) for j in range(m)]
                      for i in range(n)])
    best = {}

    def go(i, j):
        if (i, j) in best:
            return best[(i, j)]
        if i == 0 and j == 0:
            value = local[0, 0]
        else:
            options = []
            if i > 0 and j > 0:
                options.append(go(i - 1, j - 1))
            if i > 0:
                options.append(go(i - 1, j))
            if j > 0:
                options.append(go(i, j - 1))
            value = local[i, j] + min(options)
        best[(i, j)] = value
        return value

    return go(n - 1, m - 1)


class TestDtw:
    def test_self_alignment_zero_diagonal(self):
        rng = np.random.default_rng(0)
        seq = rng.normal(size=(6, 4))
        path, cost = dtw_align(seq, seq)
        assert cost == 0.0
        assert path == [(i, i) for i in range(6)]

    def test_duplicated_frames_absorbed(self):
        rng = np.random.default_rng(1)
        seq = rng.normal(size=(5, 2))
        doubled = np.repeat(seq, 2, axis=0)
        _, cost = dtw_align(seq, doubled)
        assert cost == 0.0

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(120):
            n = int(rng.integers(1, 7))
            m = int(rng.integers(1, 7))
            ref = rng.normal(size=(n, 2))
            query = rng.normal(size=(m, 2))
            _, cost = dtw_align(ref, query)
            assert cost == pytest.approx(brute_force_dtw(ref, query), rel=1e-12)

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.normal(size=(int(rng.integers(2, 9)), 3))
            b = rng.normal(size=(int(rng.integers(2, 9)), 3))
            _, c1 = dtw_align(a, b)
            _, c2 = dtw_align(b, a)
            assert c1 == pytest.approx(c2, rel=1e-12)

    def test_path_monotone_and_pinned(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(7, 2))
        b = rng.normal(size=(5, 2))
        path, _ = dtw_align(a, b)
        assert path[0] == (0, 0) and path[-1] == (6, 4)
        for (i1, j1), (i2, j2) in zip(path, path[1:]):
            assert (i2 - i1, j2 - j1) in {(1, 0), (0, 1), (1, 1)}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dtw_align(np.zeros((0, 2)), np.zeros((3, 2)))


class TestAlignAndResample:
    def test_single_sample_is_own_middle_third(self):
        rng = np.random.default_rng(5)
        sample = rng.normal(size=(30, 6))
        xy = sample[:, :4]
        out = align_and_resample([xy], [sample], "c", keep_frames=5)
        expected = resample_linear(sample, 15)[5:10]
        assert np.allclose(out.frames[0], expected)

    def test_identical_samples_identical_rows(self):
        rng = np.random.default_rng(6)
        sample = rng.normal(size=(24, 6))
        xy = sample[:, :4]
        out = align_and_resample([xy, xy.copy()], [sample, sample.copy()], "c", 5)
        assert np.array_equal(out.frames[0], out.frames[1])

    def test_time_warped_copies_collapse(self):
        # warped copies of one template: alignment removes most of the spread
        base_t = np.linspace(0, 1, 40)

        def make(t):
            return np.column_stack(
                [np.sin(2 * np.pi * t), np.cos(2 * np.pi * t),
                 np.sin(4 * np.pi * t), t]
            )

        samples = []
        for k in range(5):
            a = 0.8 * (k / 4)
            warped_t = base_t + a / (2 * np.pi) * np.sin(2 * np.pi * base_t)
            warped_t = (warped_t - warped_t[0]) / (warped_t[-1] - warped_t[0])
            samples.append(make(warped_t))

        def spread(stack):
            return np.mean(np.var(stack, axis=0))

        raw = np.stack([resample_linear(s, 30)[10:20] for s in samples])
        aligned = align_and_resample([s for s in samples], samples, "c", 10)
        assert spread(aligned.frames) <= 0.10 * spread(raw)

    def test_short_sample_rejected(self):
        with pytest.raises(ValueError, match="3 frames"):
            align_and_resample([np.zeros((2, 4))], [np.zeros((2, 6))], "c", 5)

    def test_warp_averages_query_frames(self):
        ref = np.array([[0.0], [10.0]])
        query = np.array([[0.0], [1.0], [10.0]])
        warped = warp_to_reference(ref, query, query)
        # frames 0 and 1 both map to reference slot 0
        assert warped[0, 0] == pytest.approx(0.5)
        assert warped[1, 0] == pytest.approx(10.0)


def hand_scatter(sets_frames):
    """Oracle: longhand loops over the published accumulation formulas."""
    counts = [len(s) for s in sets_frames]
    total = sum(counts)
    t_len = sets_frames[0].shape[1]
    dim = sets_frames[0].shape[2]
    mu_c = [s.mean(axis=0) for s in sets_frames]
    mu = np.zeros((t_len, dim))
    for c, frames in enumerate(sets_frames):
        mu += counts[c] / total * mu_c[c]
    sb = np.zeros((dim, dim))
    sw = np.zeros((dim, dim))
    for t in range(t_len):
        for c, frames in enumerate(sets_frames):
            d = mu_c[c][t] - mu[t]
            sb += np.outer(d, d)
            for n in range(counts[c]):
                e = frames[n, t] - mu_c[c][t]
                sw += counts[c] / total * np.outer(e, e)
    return sb, sw


class _FakeAligned:
    def __init__(self, frames, label="c"):
        self.frames = frames
        self.label = label
        self.reference_index = 0


class TestScatter:
    def test_single_class_between_is_zero(self):
        rng = np.random.default_rng(8)
        acc = accumulate_scatter([_FakeAligned(rng.normal(size=(4, 3, 5)))])
        assert np.array_equal(acc.between, np.zeros((5, 5)))

    def test_one_sample_per_class_within_is_zero(self):
        rng = np.random.default_rng(9)
        sets = [_FakeAligned(rng.normal(size=(1, 3, 5))) for _ in range(4)]
        acc = accumulate_scatter(sets)
        assert np.array_equal(acc.within, np.zeros((5, 5)))

    def test_matches_longhand_arithmetic(self):
        rng = np.random.default_rng(10)
        sets_frames = [rng.normal(size=(2, 1, 2)), rng.normal(size=(2, 1, 2))]
        acc = accumulate_scatter([_FakeAligned(f) for f in sets_frames])
        sb, sw = hand_scatter(sets_frames)
        assert np.max(np.abs(acc.between - sb)) <= 1e-12
        assert np.max(np.abs(acc.within - sw)) <= 1e-12

    def test_matches_longhand_weighted_sizes(self):
        rng = np.random.default_rng(11)
        sets_frames = [rng.normal(size=(3, 4, 6)), rng.normal(size=(5, 4, 6)),
                       rng.normal(size=(2, 4, 6))]
        acc = accumulate_scatter([_FakeAligned(f) for f in sets_frames])
        sb, sw = hand_scatter(sets_frames)
        assert np.max(np.abs(acc.between - sb)) <= 1e-10
        assert np.max(np.abs(acc.within - sw)) <= 1e-10

    def test_exact_symmetry(self):
        rng = np.random.default_rng(12)
        sets = [_FakeAligned(rng.normal(size=(4, 5, 8))) for _ in range(3)]
        acc = accumulate_scatter(sets)
        assert np.array_equal(acc.between, acc.between.T)
        assert np.array_equal(acc.within, acc.within.T)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            accumulate_scatter(
                [_FakeAligned(np.zeros((2, 3, 4))), _FakeAligned(np.zeros((2, 3, 5)))]
            )


class TestSolve:
    def test_two_class_matches_fisher_direction(self):
        rng = np.random.default_rng(13)
        for trial in range(10):
            d = 5
            mu1 = rng.normal(size=d)
            mu2 = rng.normal(size=d)
            a = rng.normal(size=(d, d))
            cov_sqrt = a @ a.T / d + np.eye(d)
            x1 = mu1 + rng.normal(size=(40, d)) @ cov_sqrt
            x2 = mu2 + rng.normal(size=(40, d)) @ cov_sqrt
            sets = [_FakeAligned(x1[:, None, :]), _FakeAligned(x2[:, None, :])]
            acc = accumulate_scatter(sets)
            transform = solve_transform(acc, out_dim=1, shrinkage=1e-9)
            m1 = x1.mean(axis=0)
            m2 = x2.mean(axis=0)
            fisher = np.linalg.solve(acc.within, m1 - m2)
            w = transform.weights[:, 0]
            cos = abs(fisher @ w) / (np.linalg.norm(fisher) * np.linalg.norm(w))
            assert cos >= 0.999

    def test_zero_between_all_zero_eigenvalues(self):
        rng = np.random.default_rng(14)
        acc = accumulate_scatter([_FakeAligned(rng.normal(size=(6, 2, 4)))])
        transform = solve_transform(acc, out_dim=4)
        assert np.max(np.abs(transform.eigenvalues)) <= 1e-10

    def test_residual_of_generalized_problem(self):
        rng = np.random.default_rng(15)
        sets = [_FakeAligned(rng.normal(size=(6, 3, 7)) + c) for c in range(3)]
        acc = accumulate_scatter(sets)
        transform = solve_transform(acc, out_dim=4, shrinkage=1e-3)
        ridge = transform.shrinkage * np.trace(acc.within) / 7 * np.eye(7)
        for k in range(4):
            w = transform.weights[:, k]
            lam = transform.eigenvalues[k]
            residual = acc.between @ w - lam * (acc.within + ridge) @ w
            assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(w)

    def test_eigenvalues_descending_nonnegative(self):
        rng = np.random.default_rng(16)
        sets = [_FakeAligned(rng.normal(size=(5, 2, 6)) + 2 * c) for c in range(4)]
        acc = accumulate_scatter(sets)
        transform = solve_transform(acc, out_dim=6)
        values = transform.eigenvalues
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] >= -1e-10

    def test_sign_convention(self):
        rng = np.random.default_rng(17)
        sets = [_FakeAligned(rng.normal(size=(5, 2, 6)) + c) for c in range(3)]
        acc = accumulate_scatter(sets)
        transform = solve_transform(acc, out_dim=3)
        for k in range(3):
            w = transform.weights[:, k]
            assert w[np.argmax(np.abs(w))] > 0

    def test_too_many_dims_rejected(self):
        rng = np.random.default_rng(18)
        acc = accumulate_scatter([_FakeAligned(rng.normal(size=(3, 2, 4)))])
        with pytest.raises(ValueError):
            solve_transform(acc, out_dim=5)


class TestProject:
    def test_identity_selects_coordinates(self):
        transform = LdaTransform(
            weights=np.eye(6)[:, :3], eigenvalues=np.ones(3), keep_frames=5,
            shrinkage=0.0,
        )
        frames = np.arange(12, dtype=float).reshape(2, 6)
        assert np.array_equal(project(frames, transform), frames[:, :3])

    def test_zero_frame_zero_output(self):
        transform = LdaTransform(
            weights=np.ones((4, 2)), eigenvalues=np.ones(2), keep_frames=5,
            shrinkage=0.0,
        )
        assert not project(np.zeros((3, 4)), transform).any()

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(19)
        frames = rng.normal(size=(4, 5))
        weights = rng.normal(size=(5, 3))
        transform = LdaTransform(weights=weights, eigenvalues=np.ones(3),
                                 keep_frames=5, shrinkage=0.0)
        got = project(frames, transform)
        expected = np.zeros((4, 3))
        for t in range(4):
            for k in range(3):
                acc = 0.0
                for d in range(5):
                    acc += frames[t, d] * weights[d, k]
                expected[t, k] = acc
        assert np.max(np.abs(got - expected)) <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(20)
        weights = rng.normal(size=(5, 3))
        transform = LdaTransform(weights=weights, eigenvalues=np.ones(3),
                                 keep_frames=5, shrinkage=0.0)
        x = rng.normal(size=(3, 5))
        y = rng.normal(size=(3, 5))
        lhs = project(2.5 * x + 0.5 * y, transform)
        rhs = 2.5 * project(x, transform) + 0.5 * project(y, transform)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_dimension_mismatch(self):
        transform = LdaTransform(weights=np.ones((4, 2)), eigenvalues=np.ones(2),
                                 keep_frames=5, shrinkage=0.0)
        with pytest.raises(ValueError):
            project(np.zeros((3, 5)), transform)


class TestTransformIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        transform = LdaTransform(
            weights=rng.normal(size=(6, 3)),
            eigenvalues=np.sort(rng.uniform(0, 5, 3))[::-1],
            keep_frames=15,
            shrinkage=1e-3,
            feature_spec="pos,S",
        )
        transform.save(tmp_path / "w.txt")
        loaded = LdaTransform.load(tmp_path / "w.txt")
        assert np.array_equal(loaded.weights, transform.weights)
        assert np.array_equal(loaded.eigenvalues, transform.eigenvalues)
        assert loaded.keep_frames == 15
        assert loaded.shrinkage == 1e-3
        assert loaded.feature_spec == "pos,S"

    def test_fit_transform_end_to_end(self):
        rng = np.random.default_rng(22)
        by_class, posxy = {}, {}
        for c in range(3):
            frames = [rng.normal(size=(20 + 2 * k, 6)) + c for k in range(4)]
            by_class[f"c{c}"] = frames
            posxy[f"c{c}"] = [f[:, :4] for f in frames]
        transform = fit_transform(by_class, posxy, out_dim=3, keep_frames=5)
        assert transform.weights.shape == (6, 3)
        assert transform.keep_frames == 5
