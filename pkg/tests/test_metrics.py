import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_eer, oracle_min_tdcf

from f0spoof.metrics import (
    EvalResult,
    MetricsError,
    ScoreRecord,
    TdcfParams,
    compute_eer,
    compute_min_tdcf,
    det_points_csv,
    evaluate,
    per_attack_eer,
    read_scores,
    write_scores,
)


def records(bona, spoof, attacks=None):
    out = [ScoreRecord(f"b{i}", "bonafide", "-", float(s)) for i, s in enumerate(bona)]
    attacks = attacks or ["A07"] * len(spoof)
    out += [ScoreRecord(f"s{i}", "spoof", a, float(s)) for i, (s, a) in enumerate(zip(spoof, attacks))]
    return out


class TestEer:
    def test_perfect_separation(self):
        assert compute_eer(records([3, 4, 5], [0, 1, 2]))[0] == 0.0

    def test_hand_case(self):
        eer, thr = compute_eer(records([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]))
        assert eer == 1 / 3
        assert thr == 0.7

    def test_hand_case_matches_oracle(self):
        assert oracle_eer([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]) == 1 / 3

    def test_fully_inverted(self):
        assert compute_eer(records([0, 1], [5, 6]))[0] == 1.0

    def test_single_class(self):
        with pytest.raises(MetricsError):
            compute_eer(records([1, 2], []))

    def test_random_sets_match_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            nb, ns = rng.integers(1, 26, size=2)
            bona = np.round(rng.normal(0.5, 1, nb), 1).tolist()
            spoof = np.round(rng.normal(0, 1, ns), 1).tolist()
            got = compute_eer(records(bona, spoof))[0]
            assert abs(got - oracle_eer(bona, spoof)) <= 1e-12

    def test_swapped_labels(self):
        rng = np.random.default_rng(1)
        bona, spoof = rng.normal(1, 1, 20).tolist(), rng.normal(0, 1, 20).tolist()
        swapped = compute_eer(records(spoof, bona))[0]
        assert abs(swapped - oracle_eer(spoof, bona)) <= 1e-12
        assert swapped >= compute_eer(records(bona, spoof))[0]


class TestTdcf:
    def test_perfect_separation(self):
        assert compute_min_tdcf(records([3, 4], [1, 2])) == 0.0

    def test_accept_everything(self):
        p = TdcfParams()
        # every spoof scores above every bonafide: the best a CM can do is a default decision
        got = compute_min_tdcf(records([0, 1], [5, 6]), p)
        assert got == pytest.approx(min(p.c1, p.c2) / min(p.c1, p.c2))
        accept_all = p.c2 / min(p.c1, p.c2)
        assert got <= accept_all

    def test_accept_everything_point(self):
        from f0spoof.metrics import tdcf_curve

        p = TdcfParams()
        curve, thr = tdcf_curve(np.array([0.3, 0.9]), np.array([0.1, 0.5]), p)
        assert thr[0] == 0.1
        assert curve[0] == pytest.approx(p.c2 / min(p.c1, p.c2), rel=1e-15)

    def test_random_sets_match_oracle(self):
        rng = np.random.default_rng(2)
        p = TdcfParams()
        for _ in range(100):
            nb, ns = rng.integers(1, 26, size=2)
            bona = rng.normal(0.7, 1, nb).tolist()
            spoof = rng.normal(0, 1, ns).tolist()
            got = compute_min_tdcf(records(bona, spoof), p)
            assert abs(got - oracle_min_tdcf(bona, spoof, p)) <= 1e-12

    def test_degenerate_params(self):
        p = TdcfParams(p_miss_spoof_asv=1.0)
        with pytest.raises(MetricsError, match="degenerate"):
            compute_min_tdcf(records([1], [0]), p)

    def test_priors_must_sum_to_one(self):
        with pytest.raises(MetricsError):
            TdcfParams(pi_tar=0.5)

    def test_param_file(self, tmp_path):
        path = tmp_path / "tdcf.txt"
        path.write_text("# costs\nc_fa_cm = 5\np_miss_asv=0.1\n\n")
        p = TdcfParams.from_file(path)
        assert p.c_fa_cm == 5 and p.p_miss_asv == 0.1 and p.c_miss_cm == 1
        path.write_text(TdcfParams().to_text())
        assert TdcfParams.from_file(path) == TdcfParams()

    def test_param_file_unknown_key(self, tmp_path):
        path = tmp_path / "tdcf.txt"
        path.write_text("bogus=1\n")
        with pytest.raises(MetricsError, match="bogus"):
            TdcfParams.from_file(path)


class TestPerAttack:
    def test_single_attack_consistent(self):
        recs = records([0.9, 0.8, 0.3], [0.7, 0.2, 0.1])
        assert per_attack_eer(recs) == {"A07": compute_eer(recs)[0]}

    def test_separable_and_not(self):
        recs = records([1, 2, 3], [-1, -2, 2.5, 1.5], ["A08", "A08", "A09", "A09"])
        res = per_attack_eer(recs)
        assert res["A08"] == 0.0
        assert res["A09"] > 0.0

    def test_missing_attack_omitted(self, caplog):
        res = per_attack_eer(records([1], [0]), attacks=["A07", "A19"])
        assert set(res) == {"A07"}
        assert "A19" in caplog.text

    def test_pooled_unaffected_by_breakdown(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            bona = rng.normal(1, 1, 15).tolist()
            spoof = rng.normal(0, 1, 15).tolist()
            attacks = rng.choice(["A07", "A08", "A09"], 15).tolist()
            recs = records(bona, spoof, attacks)
            assert compute_eer(recs)[0] == pytest.approx(oracle_eer(bona, spoof), abs=1e-12)


class TestInvariants:
    @settings(max_examples=50, deadline=None)
    @given(
        # a coarse grid keeps distinct scores distinct after the warp below
        bona=st.lists(st.integers(-500, 500).map(lambda i: i / 100), min_size=1, max_size=25),
        spoof=st.lists(st.integers(-500, 500).map(lambda i: i / 100), min_size=1, max_size=25),
        seed=st.integers(0, 1000),
    )
    def test_shuffle_and_monotone_transform(self, bona, spoof, seed):
        recs = records(bona, spoof)
        eer, tdcf = compute_eer(recs)[0], compute_min_tdcf(recs)
        assert 0 <= eer <= 1 and 0 <= tdcf <= 1 + 1e-12
        rng = np.random.default_rng(seed)
        shuffled = [recs[i] for i in rng.permutation(len(recs))]
        assert compute_eer(shuffled)[0] == eer
        assert compute_min_tdcf(shuffled) == tdcf
        warped = [ScoreRecord(r.utt_id, r.key, r.attack_id, float(np.arctan(r.score) * 3 + 7)) for r in recs]
        assert compute_eer(warped)[0] == pytest.approx(eer, abs=1e-12)
        assert compute_min_tdcf(warped) == pytest.approx(tdcf, abs=1e-12)


class TestScoreFiles:
    def test_round_trip(self, tmp_path):
        recs = records([0.9, 0.8, 0.3], [0.7, 0.2, 0.1], ["A07", "A08", "A07"])
        path = tmp_path / "scores.txt"
        write_scores(path, recs)
        assert path.read_text().splitlines()[0] == "b0 - bonafide 0.9"
        assert read_scores(path) == recs

    def test_bad_line(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("u1 - bonafide 0.5\nu2 A07 spoof\n")
        with pytest.raises(MetricsError, match=":2:"):
            read_scores(path)

    def test_key_attack_mismatch(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("u1 A07 bonafide 0.5\n")
        with pytest.raises(MetricsError):
            read_scores(path)

    def test_evaluate_report(self):
        res = evaluate(records([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]))
        assert isinstance(res, EvalResult)
        assert res.eer == 1 / 3 and res.n_bonafide == 3 and res.n_spoof == 3
        import json

        blob = json.loads(res.to_json())
        assert set(blob) >= {"eer", "threshold", "min_tdcf", "per_attack"}
        assert "EER" in res.to_table()

    def test_det_csv(self):
        csv = det_points_csv(records([1, 2], [0]))
        lines = csv.splitlines()
        assert lines[0] == "threshold,frr,far"
        assert lines[-1] == "inf,1.0,0.0"
