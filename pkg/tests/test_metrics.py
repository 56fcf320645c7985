import numpy as np
import pytest

from lrslab.mdp import build_room, rollout, room_script, scripted_policy, shipped_room
from lrslab.metrics import (
    EpisodeRow,
    Heatmap,
    RoomMismatch,
    RunRecord,
    auc,
    heatmap,
    mean_distance_from_start,
    significance,
    success_rate,
    summarize,
)

stats = pytest.importorskip("scipy.stats")


def record(wins, seed=0):
    return RunRecord([EpisodeRow(i, 3, float(w), 0.0, 0.25, w) for i, w in enumerate(wins, start=1)], seed)


def test_auc_hand_computed():
    # cumulative wins 0,1,2,2 capped at 2 -> (0+1+2+2) / (4*2)
    assert auc([0, 1, 1, 0], budget=4, win_cap=2) == pytest.approx(0.625)
    assert auc([1] * 10, budget=10, win_cap=10) == pytest.approx(0.55)
    assert auc([1] * 5, budget=5, win_cap=1) == 1.0


def test_auc_holds_last_value_when_stopped_early():
    assert auc([1, 1], budget=4, win_cap=2) == pytest.approx((1 + 2 + 2 + 2) / 8)
    assert auc(record([0, 1, 1, 1, 1]), budget=3, win_cap=5) == pytest.approx(3 / 15)
    with pytest.raises(ValueError):
        auc([], 3)
    with pytest.raises(ValueError):
        auc([1], 0)


def test_success_rate():
    assert success_rate([[0, 0], [0, 1], record([1])]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        success_rate([])


def test_run_record_csv_round_trip(tmp_path):
    rec = RunRecord([EpisodeRow(1, 7, 0.0, 0.1 + 0.2, 1 / 3, 0), EpisodeRow(2, 4, 1.0, 0.5, 0.0, 1)], seed=4)
    path = tmp_path / "r.csv"
    rec.write(path)
    assert path.read_text().splitlines()[0] == "episode,steps,env_r,lang_r,int_r,win"
    back = RunRecord.read(path, seed=4)
    assert back.rows == rec.rows
    assert back.to_csv() == rec.to_csv()


def test_run_record_validation(tmp_path):
    with pytest.raises(ValueError):
        RunRecord([EpisodeRow(2, 1, 0, 0, 0, 0)])
    with pytest.raises(ValueError):
        RunRecord([EpisodeRow(1, 1, 0, 0, 0, 2)])
    bad = tmp_path / "bad.csv"
    bad.write_text("ep,steps\n1,2\n")
    with pytest.raises(ValueError):
        RunRecord.read(bad)


def test_rank_test_matches_scipy_exact():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n, m = int(rng.integers(3, 13)), int(rng.integers(3, 13))
        # scipy's exact distribution assumes no ties, so keep values distinct
        a = rng.normal(size=n)
        b = rng.normal(size=m) + 0.5
        ours = significance(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="less", method="exact")
        assert ours.method == "exact"
        assert ours.u_statistic == pytest.approx(ref.statistic)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_rank_test_exact_with_ties_matches_permutation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.integers(0, 4, size=int(rng.integers(3, 8))).astype(float)
        b = rng.integers(1, 5, size=int(rng.integers(3, 8))).astype(float)
        if np.all(np.concatenate([a, b]) == a[0]):
            continue
        ref = stats.permutation_test(
            (a, b), lambda x, y: stats.mannwhitneyu(x, y).statistic, permutation_type="independent", alternative="less", n_resamples=np.inf
        )
        assert significance(a, b).p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_rank_test_normal_branch_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.integers(0, 10, size=15).astype(float)
        b = rng.integers(2, 12, size=20).astype(float)
        ours = significance(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="less", method="asymptotic", use_continuity=True)
        assert ours.method == "normal"
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_rank_test_edge_cases():
    deg = significance([0.5] * 4, [0.5] * 4)
    assert deg.degenerate and deg.p_value == 1.0
    assert significance([0.0] * 5, [0.6] * 5).p_value == pytest.approx(1 / 252)
    assert significance([0.6] * 5, [0.0] * 5).p_value == 1.0
    with pytest.raises(ValueError):
        significance([1, 2], [3, 4, 5])


def test_heatmap_counts_and_distance():
    spec = shipped_room("A2")
    env = build_room(spec)
    traj = rollout(env, scripted_policy(room_script("A2", "shortcut")), seed=0)
    hm = heatmap([traj, traj], spec)
    assert hm.total == 2 * (len(traj) + 1)
    assert hm.start == (1, 9)
    assert hm.counts[1, 9] == 2
    assert mean_distance_from_start(hm) > 0
    assert mean_distance_from_start(Heatmap(np.zeros((2, 2), dtype=np.int64))) == 0.0


def test_heatmap_distance_hand_computed():
    counts = np.array([[1, 0, 3], [0, 0, 0]])
    assert mean_distance_from_start(Heatmap(counts, (0, 0))) == pytest.approx(6 / 4)


def test_heatmap_room_mismatch():
    env = build_room(shipped_room("A2"))
    traj = rollout(env, scripted_policy(room_script("A2")), seed=0)
    with pytest.raises(RoomMismatch):
        heatmap([traj], shipped_room("chain"))
    with pytest.raises(RoomMismatch):
        Heatmap(np.zeros((2, 2))) + Heatmap(np.zeros((3, 2)))


def test_heatmap_files(tmp_path):
    hm = Heatmap(np.array([[0, 1], [9, 0]], dtype=np.int64), (1, 0))
    path = tmp_path / "h.csv"
    path.write_text(hm.to_csv())
    back = Heatmap.read_csv(path, (1, 0))
    assert np.array_equal(back.counts, hm.counts)
    pgm = hm.to_pgm().decode().split("\n")
    assert pgm[:3] == ["P2", "2 2", "255"]
    assert pgm[4] == "255 0"
    assert (hm + hm).total == 20


def test_summarize():
    recs = [record([0, 1, 1], seed=1), record([0, 0, 0], seed=2), record([1, 1, 1], seed=3)]
    s = summarize(recs, budget=3, win_cap=3)
    assert s.seeds == [1, 2, 3]
    assert s.success == pytest.approx(2 / 3)
    assert s.aucs == pytest.approx([3 / 9, 0.0, 6 / 9])
    assert s.mean == pytest.approx(1 / 3)
    assert s.std == pytest.approx(np.std(s.aucs, ddof=1))
