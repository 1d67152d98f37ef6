import numpy as np
import pytest

from conftest import make_outcomes
from errors import VoteError
from voting import Thresholds, classify_score, default_similarity, sim_vote, uni_vote

CLUSTER = list(range(1000))
SAMPLE = list(range(101))


def test_golden_example_all_true():
    outcomes = make_outcomes([True] * 100 + [False])

    report = uni_vote(outcomes, CLUSTER, SAMPLE, Thresholds(lb=0.15, ub=0.85))

    assert report.positives == frozenset(range(101, 1000))
    assert not report.undetermined and not report.negatives
    assert report.scores[500] == pytest.approx(100 / 101)


def test_golden_example_undetermined():
    outcomes = make_outcomes([True] * 81 + [False] * 20)

    report = uni_vote(outcomes, CLUSTER, SAMPLE, Thresholds(lb=0.15, ub=0.85))

    assert report.undetermined == frozenset(range(101, 1000))
    assert not report.positives and not report.negatives


def test_boundaries_are_inclusive():
    th = Thresholds(lb=0.25, ub=0.75)
    assert classify_score(0.75, th) is True
    assert classify_score(0.25, th) is False
    assert classify_score(0.5, th) is None


def test_default_upper_threshold():
    assert Thresholds(lb=0.15).ub == pytest.approx(0.85)
    with pytest.raises(VoteError):
        Thresholds(lb=0.6, ub=0.4)


def test_all_false_sample_votes_negative():
    report = uni_vote(make_outcomes([False] * 5), range(10), range(5), Thresholds())
    assert report.negatives == frozenset(range(5, 10))


def test_vote_input_errors():
    th = Thresholds()
    with pytest.raises(VoteError):
        uni_vote([], range(10), [], th)
    with pytest.raises(VoteError):
        uni_vote(make_outcomes([True], start=20), range(10), [20], th)
    with pytest.raises(VoteError):
        uni_vote(make_outcomes([True, True]), range(10), [0], th)


def test_sim_vote_matches_uni_vote_with_constant_similarity():
    rng = np.random.default_rng(123)
    for _ in range(100):
        size = int(rng.integers(2, 60))
        sampled = sorted(rng.choice(size, size=int(rng.integers(1, size)), replace=False).tolist())
        outcomes = [make_outcomes([rng.random() < 0.6], start=rid)[0] for rid in sampled]
        lb = float(rng.uniform(0.0, 0.45))
        th = Thresholds(lb=lb)
        constant = float(rng.uniform(0.1, 5.0))

        def sim(targets, samples):
            return np.full((len(targets), len(samples)), constant)

        assert sim_vote(outcomes, range(size), sampled, th, sim) == uni_vote(outcomes, range(size), sampled, th)


def test_sim_vote_weights_nearby_samples():
    outcomes = make_outcomes([True, False], start=0)

    def sim(targets, samples):
        # target 2 is close to sample 0, target 3 to sample 1
        table = {2: [9.0, 1.0], 3: [1.0, 9.0]}
        return np.array([table[t] for t in targets])

    report = sim_vote(outcomes, [0, 1, 2, 3], [0, 1], Thresholds(lb=0.15), sim)

    assert report.scores[2] == pytest.approx(0.9)
    assert report.scores[3] == pytest.approx(0.1)
    assert report.positives == {2}
    assert report.negatives == {3}


def test_sim_vote_counts_skewed_weights():
    outcomes = make_outcomes([True, False, True, False])

    def sim(targets, samples):
        return np.array([[10.0, 1.0, 1.0, 1.0] for _ in targets])

    report = sim_vote(outcomes, range(6), range(4), Thresholds(), sim, weight_skew=2.0)

    # max weight 10/13 > 2/4
    assert report.skew_violations == 2


def test_sim_vote_zero_normalizer():
    def sim(targets, samples):
        return np.zeros((len(targets), len(samples)))

    with pytest.raises(VoteError):
        sim_vote(make_outcomes([True]), range(3), [0], Thresholds(), sim)


def test_default_similarity():
    euclid = lambda a, b: float(np.linalg.norm(a - b))
    assert default_similarity([0, 0], [3, 4], euclid) == pytest.approx(1 / 6)
    with pytest.raises(VoteError):
        default_similarity([0], [0, 1], euclid)


def test_flipping_a_sampled_label_to_true_never_lowers_a_score():
    rng = np.random.default_rng(31)
    cluster, sample = list(range(60)), list(range(0, 60, 3))
    vectors = rng.standard_normal((60, 4))

    def sim(rows, cols):
        d = np.linalg.norm(vectors[rows][:, None, :] - vectors[cols][None, :, :], axis=2)
        return 1.0 / (1.0 + d)

    def outcomes(values):
        return [o for rid, v in zip(sample, values) for o in make_outcomes([v], start=rid)]

    th = Thresholds()
    for _ in range(20):
        labels = rng.random(len(sample)) < 0.5
        if labels.all():
            continue
        flip = int(rng.choice(np.flatnonzero(~labels)))
        raised = labels.copy()
        raised[flip] = True
        for vote in (lambda o: uni_vote(o, cluster, sample, th), lambda o: sim_vote(o, cluster, sample, th, sim=sim)):
            before, after = vote(outcomes(labels)).scores, vote(outcomes(raised)).scores
            assert all(after[rid] >= before[rid] - 1e-12 for rid in before)
