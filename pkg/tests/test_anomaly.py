import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmad.anomaly import (
    AnomalyReport,
    ResidualSeries,
    autoencoder_residual_series,
    consensus,
    detect,
    per_event_stats,
    quorum_votes,
    residual_series,
    write_residual_csv,
)
from lmad.network import Network, NetworkSpec
from lmad.timeseries import EventSeries


def identity_net():
    return Network(NetworkSpec(1, (), 1, hidden_activation="linear"), [1.0, 0.0])


def two_event_residuals(test_value, train_value=0.1):
    # event 0 is training, event 1 is test
    return ResidualSeries([train_value, -train_value, test_value], [1, 2], 2)


def report_with(flags, n_events=4, n_train=2):
    per = [(e, 1.0, 1.0) for e in range(n_events)]
    return AnomalyReport(1.0, per, 2.0, set(flags), n_train)


class TestResiduals:
    def test_identity_model_gives_output_minus_input(self):
        s = EventSeries([1.0, 2.0, 3.0], [1.5, 2.0, 2.0], [1, 2])
        res = residual_series(identity_net(), s, 2)
        np.testing.assert_array_equal(res.values, [0.5, 0.0, -1.0])

    def test_boundary_must_be_event_boundary(self):
        with pytest.raises(ValueError):
            ResidualSeries([0.1, 0.2, 0.3], [1, 2], 1)

    def test_per_event_stats(self):
        stats = per_event_stats(ResidualSeries([1.0, -2.0, 3.0], [1, 2], 2))
        assert [s.max_abs for s in stats] == [2.0, 3.0]
        assert stats[0].mean_abs == 1.5 and stats[0].mse == 2.5

    def test_autoencoder_residual_zero_for_identity(self):
        spec = NetworkSpec(4, (), 4, hidden_activation="linear", mode="autoencoder")
        P = np.concatenate([np.eye(4).ravel(), np.zeros(4)])
        s = EventSeries(np.zeros(10), np.arange(10.0), [4, 9])
        res = autoencoder_residual_series(Network(spec, P), s, 5, stride=2)
        assert res.values.shape == (10,)
        np.testing.assert_array_equal(res.values, 0.0)

    def test_regressor_residual_needs_scalar_net(self):
        net = Network(NetworkSpec(2, (3,), 1), np.zeros(NetworkSpec(2, (3,), 1).param_count))
        with pytest.raises(ValueError):
            residual_series(net, EventSeries([0.0], [0.0], [0]), 1)


class TestDetect:
    def test_flags_large_ratio(self):
        rep = detect(two_event_residuals(0.35))
        assert rep.train_max == 0.1
        assert rep.ratio(1) == pytest.approx(3.5)
        assert rep.flagged_events == {1}

    def test_small_ratio_not_flagged(self):
        rep = detect(two_event_residuals(0.15))
        assert rep.ratio(1) == pytest.approx(1.5) and rep.flagged_events == set()

    def test_threshold_one_boundary_is_inclusive(self):
        assert detect(two_event_residuals(0.1), 1.0).flagged_events == {1}

    def test_zero_training_residual_rejected(self):
        with pytest.raises(ValueError):
            detect(two_event_residuals(1.0, train_value=0.0))

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=40), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, values, c):
        v = np.array(values)
        v[0] = 1.0  # non-zero training max
        ends = [len(v) // 3 - 1, 2 * len(v) // 3 - 1, len(v) - 1]
        res_a = ResidualSeries(v, ends, ends[0] + 1)
        res_b = ResidualSeries(c * v, ends, ends[0] + 1)
        a, b = detect(res_a), detect(res_b)
        np.testing.assert_allclose([p[2] for p in a.per_event], [p[2] for p in b.per_event],
                                   rtol=1e-12)
        # ratios within rounding of the threshold may legitimately flip
        near = {e for e, _, q in a.per_event if abs(q - 2.0) < 1e-9}
        assert a.flagged_events - near == b.flagged_events - near

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=30), st.floats(0.5, 5), st.floats(0, 5))
    def test_monotone_in_threshold_and_train_only_never_flagged(self, values, t1, gap):
        v = np.array(values)
        v[0] = 1.0
        ends = list(range(1, len(v), 2))
        if ends[-1] != len(v) - 1:
            ends.append(len(v) - 1)
        res = ResidualSeries(v, ends, ends[0] + 1)
        lo, hi = detect(res, t1), detect(res, t1 + gap)
        assert hi.flagged_events <= lo.flagged_events
        assert all(e >= lo.n_train_events for e in lo.flagged_events)

    def test_report_document(self):
        doc = detect(two_event_residuals(0.35), output_scale=2.0).to_dict()
        assert doc["flagged_events"] == [1] and doc["train_max_raw"] == pytest.approx(0.2)
        assert AnomalyReport.from_dict(doc).flagged_events == {1}


class TestConsensus:
    def test_unanimous(self):
        rep = consensus([report_with({3})] * 5, 0.8)
        assert rep.consensus_events == {3} and rep.artefact_events == set()

    def test_single_run_is_artefact(self):
        runs = [report_with({2})] + [report_with(set())] * 4
        rep = consensus(runs, 0.8)
        assert rep.consensus_events == set() and rep.artefact_events == {2}

    def test_four_of_five_meets_quorum(self):
        runs = [report_with({3})] * 4 + [report_with(set())]
        assert consensus(runs, 0.8).consensus_events == {3}

    def test_too_few_runs(self):
        with pytest.raises(ValueError):
            consensus([report_with({1})])

    def test_mismatched_structure(self):
        with pytest.raises(ValueError):
            consensus([report_with({3}), report_with({3}, n_events=5)])

    def test_quorum_rounding(self):
        assert quorum_votes(0.8, 5) == 4
        assert quorum_votes(0.7, 10) == 7
        assert quorum_votes(1.0, 3) == 3

    @settings(max_examples=50)
    @given(st.lists(st.sets(st.integers(2, 5)), min_size=2, max_size=8),
           st.floats(0.01, 1.0), st.floats(0.0, 1.0))
    def test_non_increasing_in_quorum(self, flag_sets, q1, frac):
        runs = [report_with(f, n_events=6) for f in flag_sets]
        q2 = q1 + frac * (1.0 - q1)
        a, b = consensus(runs, q1), consensus(runs, q2)
        assert b.consensus_events <= a.consensus_events
        assert a.consensus_events | a.artefact_events == set().union(*flag_sets)


def test_residual_csv(tmp_path):
    res = ResidualSeries([0.1, -0.2, 0.3], [1, 2], 2)
    write_residual_csv(res, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "index,residual,event,region"
    assert lines[1:] == ["0,0.1,0,train", "1,-0.2,0,train", "2,0.3,1,test"]
