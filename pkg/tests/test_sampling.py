import numpy as np
import pytest

from helpers import random_model
from svarss.errors import SchemeError
from svarss.model import simulate
from svarss.sampling import (
    SamplingScheme,
    apply_scheme,
    load_csv,
    mixed_scheme,
    observation_set_from_record,
    reinterpret,
    scheme_from_mask,
    uniform_scheme,
    write_csv,
)


class TestSchemes:
    def test_kinds(self):
        assert uniform_scheme(2, 1).kind == "full"
        assert uniform_scheme(2, 3).kind == "A"
        assert mixed_scheme([1, 2]).kind == "B"
        assert mixed_scheme([2, 4]).kind == "C"
        assert mixed_scheme([2, 3]).kind == "D"
        mask = np.ones((6, 2), dtype=bool)
        mask[3, 1] = False
        assert scheme_from_mask(mask).kind == "mask"

    def test_exactly_one_spec(self):
        with pytest.raises(SchemeError):
            SamplingScheme(p=2, rates=[1, 2], mask=np.ones((4, 2), dtype=bool))
        with pytest.raises(SchemeError):
            SamplingScheme(p=2)

    def test_observed_at_and_mask_agree(self):
        scheme = mixed_scheme([1, 2, 3])
        mask = scheme.observation_mask(12)
        for t in range(1, 13):
            assert np.array_equal(scheme.observed_at(t), mask[t - 1])
        # series j observed when (t-1) % rate == 0, 1-based anchor at t=1
        assert mask[0].all()
        assert np.array_equal(mask[1], [True, False, False])
        assert np.array_equal(mask[2], [True, True, False])
        assert np.array_equal(mask[3], [True, False, True])

    def test_anchors_at_lcm(self):
        scheme = mixed_scheme([2, 3])
        assert scheme.k_star() == 6
        anchors = scheme.anchors(20)
        assert list(anchors) == [1, 7, 13, 19]

    def test_mask_scheme_has_no_k_star(self):
        mask = np.ones((5, 2), dtype=bool)
        mask[2, 0] = False
        with pytest.raises(SchemeError):
            scheme_from_mask(mask).k_star()


class TestBlocks:
    def test_uniform_blocks(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 21, seed=0)
        obs = apply_scheme(uniform_scheme(2, 4), traj)
        assert len(obs.blocks) == 5
        assert all(b.n_steps == 4 for b in obs.blocks)
        assert obs.n_transitions == 20
        for b in obs.blocks:
            assert np.array_equal(b.x0, traj.X[b.t0 - 1])
            assert np.array_equal(b.values[-1], traj.X[b.t1 - 1])
            # interior times carry no observations at k=4 with p=2 rates (4,4)
            for s in range(1, b.n_steps):
                assert len(b.observed[s]) == 0

    def test_mixed_blocks_carry_partial_interiors(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 13, seed=1)
        obs = apply_scheme(mixed_scheme([1, 2]), traj)
        for b in obs.blocks:
            assert b.n_steps == 2
            assert np.array_equal(b.observed[1], [0])  # fast series only
            assert np.array_equal(b.observed[2], [0, 1])
            assert b.values[1][0] == traj.X[b.t0, 0]

    def test_n_loglik_scalars_excludes_first_anchor(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 9, seed=2)
        obs = apply_scheme(uniform_scheme(2, 2), traj)
        # 4 blocks, each contributing its final anchor (2 scalars), nothing else
        assert obs.n_loglik_scalars == 8
        obs_mixed = apply_scheme(mixed_scheme([1, 2]), traj)
        # per block: 1 interior scalar + 2 anchor scalars
        assert obs_mixed.n_loglik_scalars == sum(
            b.n_observed(include_anchor=False) for b in obs_mixed.blocks
        )

    def test_pattern_key(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 9, seed=3)
        obs = apply_scheme(uniform_scheme(2, 2), traj)
        patterns = {b.pattern() for b in obs.blocks}
        assert patterns == {((), (0, 1))}

    def test_too_few_anchors(self):
        record = np.full((5, 2), np.nan)
        record[0] = [1.0, 2.0]
        with pytest.raises(SchemeError):
            observation_set_from_record(record)

    def test_head_tail_dropped_with_warning(self):
        record = np.full((7, 2), np.nan)
        record[1] = [1.0, 1.0]
        record[3] = [2.0, 2.0]
        record[0, 0] = 9.0  # before the first anchor
        record[5, 1] = 9.0  # after the last anchor
        with pytest.warns(UserWarning):
            obs = observation_set_from_record(record)
        assert len(obs.blocks) == 1
        assert obs.blocks[0].t0 == 2 and obs.blocks[0].t1 == 4


class TestRecordInterpretation:
    def test_dilation(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 9, seed=4)
        dense = apply_scheme(uniform_scheme(2, 1), traj)
        redo = observation_set_from_record(dense.record[::1], k=3)
        # latent time axis stretches: T = 1 + (9-1)*3
        assert redo.T == 25
        assert all(b.n_steps == 3 for b in redo.blocks)
        assert len(redo.blocks) == 8
        # same observed scalars as the dense set, different latent spacing
        assert redo.n_loglik_scalars == dense.n_loglik_scalars

    def test_reinterpret_equivalence(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 9, seed=5)
        dense = apply_scheme(uniform_scheme(2, 1), traj)
        a = reinterpret(dense, 2)
        b = observation_set_from_record(dense.record, k=2)
        assert a.T == b.T and len(a.blocks) == len(b.blocks)
        for ba, bb in zip(a.blocks, b.blocks):
            assert ba.t0 == bb.t0 and ba.t1 == bb.t1
            assert np.array_equal(ba.values[-1], bb.values[-1])

    def test_rates_must_match_record(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 13, seed=6)
        obs = apply_scheme(mixed_scheme([1, 2]), traj)
        again = observation_set_from_record(obs.record, rates=[1, 2])
        assert len(again.blocks) == len(obs.blocks)
        with pytest.raises(SchemeError):
            observation_set_from_record(obs.record, rates=[2, 2])

    def test_dilation_requires_dense(self, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 13, seed=7)
        obs = apply_scheme(mixed_scheme([1, 2]), traj)
        with pytest.raises(SchemeError):
            observation_set_from_record(obs.record, k=2)


class TestCsv:
    def test_roundtrip_values_and_nans(self, tmp_path, rng):
        model = random_model(rng, 3)
        traj = simulate(model, 13, seed=8)
        obs = apply_scheme(mixed_scheme([1, 2, 3]), traj)
        path = tmp_path / "data.csv"
        write_csv(obs.record, path)
        back = load_csv(path)
        assert back.shape == obs.record.shape
        both_nan = np.isnan(obs.record) & np.isnan(back)
        assert np.array_equal(obs.record[~both_nan], back[~both_nan])
        assert np.isnan(back).sum() == np.isnan(obs.record).sum()

    def test_header_and_empty_cells(self, tmp_path):
        record = np.array([[1.0, np.nan], [2.0, 3.0]])
        path = tmp_path / "d.csv"
        write_csv(record, path)
        text = path.read_text().splitlines()
        assert text[0] == "t,x1,x2"
        assert text[1] == "1,1.0,"

    def test_skipped_rows_fill_nan(self, tmp_path):
        (tmp_path / "d.csv").write_text("t,x1\n1,0.5\n4,0.25\n")
        rec = load_csv(tmp_path / "d.csv")
        assert rec.shape == (4, 1)
        assert np.isnan(rec[1, 0]) and np.isnan(rec[2, 0])
        assert rec[3, 0] == 0.25

    def test_bad_header_rejected(self, tmp_path):
        (tmp_path / "d.csv").write_text("t,y1\n1,0.5\n")
        with pytest.raises(ValueError):
            load_csv(tmp_path / "d.csv")

    def test_nonincreasing_time_rejected(self, tmp_path):
        (tmp_path / "d.csv").write_text("t,x1\n2,0.5\n2,0.6\n")
        with pytest.raises(ValueError):
            load_csv(tmp_path / "d.csv")

    def test_deterministic_bytes(self, tmp_path, rng):
        model = random_model(rng, 2)
        traj = simulate(model, 9, seed=9)
        obs = apply_scheme(uniform_scheme(2, 2), traj)
        write_csv(obs.record, tmp_path / "a.csv")
        write_csv(obs.record, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
