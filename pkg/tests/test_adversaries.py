import pytest

from asyncba.adversaries import (ADVERSARIES, Adversary, CrashAdversary, ForcedKeepAdversary,
                                 MirrorMimicAdversary, SigmaSchedulingAdversary, make_adversary)
from asyncba.agreement import Simulation, run_protocol
from asyncba.core import HarnessFault, derive_params

P7 = derive_params(2, 0.5, 16, 16, 2)
MIXED = [1, -1, 1, -1, 1, -1, 1]


def epoch_sim(adv, seed, **kw):
    kw.setdefault("inputs", MIXED)
    sim = Simulation(P7, adv, seed=seed, stop_when_decided=False, max_iterations=P7.T, **kw)
    return sim, sim.run()


def test_registry():
    assert set(ADVERSARIES) == {"fair", "crash", "mirror-mimic", "sigma-scheduling", "forced-keep"}
    for name in ADVERSARIES:
        assert make_adversary(name).name == name
    with pytest.raises(ValueError):
        make_adversary("oracle")


def test_fair_claims_no_corruption():
    rep = run_protocol(P7, Adversary(), seed=0)
    assert rep.corrupt == () and rep.decided


def test_empty_crash_set_is_fair():
    a = run_protocol(P7, CrashAdversary(crash_set=()), seed=4)
    b = run_protocol(P7, Adversary(), seed=4)
    assert a.corrupt == ()
    assert (a.decided_value, a.iterations_used, a.latency_time) == (b.decided_value, b.iterations_used,
                                                                      b.latency_time)


def test_crash_set_over_budget():
    with pytest.raises(HarnessFault):
        Simulation(P7, CrashAdversary(crash_set=[0, 1, 2]))


@pytest.mark.parametrize("seed", range(5))
def test_crashed_columns_stay_partial(seed):
    sim, rep = epoch_sim(CrashAdversary(crash_set=[1, 4]), seed)
    for b in sim.history.boards:
        assert b.written(1) == 0 and b.written(4) == 0
        assert len(b.full_columns()) == 5
    assert sim.history.check_contract() == []
    assert rep.decided


class Greedy(Adversary):
    name = "greedy"

    def corruptions(self, t):
        return range(self.sim.n)


def test_corruption_budget_enforced():
    with pytest.raises(HarnessFault):
        epoch_sim(Greedy(), 0)


class Overeraser(Adversary):
    name = "overeraser"

    def erasures(self, p, board, history, info):
        return range(3)


def test_erasure_budget_enforced():
    with pytest.raises(HarnessFault):
        epoch_sim(Overeraser(), 0)


def test_corrupt_players_follow_protocol_outside_the_coin():
    """Corrupt players' broadcasts pass the same validation good players' do."""
    sim, _ = epoch_sim(MirrorMimicAdversary(), 3)
    for pl in sim.players:
        for key, got in pl.valid.items():
            for sender in got:
                assert sim.sent[key][sender] == got[sender]


@pytest.mark.parametrize("seed", range(4))
def test_mirror_stalls_and_builds_negative_correlation(seed):
    adv = MirrorMimicAdversary()
    sim, rep = epoch_sim(adv, seed, keep_records=True)
    counts = sim.epoch_data[0]["true"]
    bad = sorted(sim.corrupt)
    good = [p for p in range(7) if p not in bad]
    good_bad = sum(counts[i, j] for i in good for j in bad)
    assert good_bad < 0
    assert adv.steer_stats["split_planned"] > 0
    assert rep.stats["iterations"] == P7.T


def test_mirror_usually_undecided_for_an_epoch():
    undecided = 0
    for seed in range(8):
        sim, rep = epoch_sim(MirrorMimicAdversary(), seed)
        undecided += rep.decided_value is None
    assert undecided >= 4


def test_sigma_targets_show_inflated_sigma_corr_but_weights_stay_whole():
    target_sum = other_sum = 0
    for seed in range(10):
        adv = SigmaSchedulingAdversary()
        sim, rep = epoch_sim(adv, seed)
        s = rep.epochs[0].sigma_corr
        target_sum += sum(s[i] for i in adv.targets)
        other_sum += sum(s[i] for i in range(7) if i not in adv.targets)
        assert rep.final_weights == (1.0,) * 7
        assert rep.min_invariant1_margin >= 0
        assert adv.slow not in sim.corrupt and not set(adv.targets) & sim.corrupt
    assert target_sum / 20 > other_sum / 50 + 3


def test_sigma_choice_happens_after_boards():
    adv = SigmaSchedulingAdversary()
    sim, _ = epoch_sim(adv, 1)
    assert adv.choices  # decisions were taken in on_boards
    for t, keep in adv.choices.items():
        xs = sim.records[t].X
        if keep:
            vstar = sim.sent[(t, "L3")][adv.slow]
            assert all((1 if xs[i] >= 0 else -1) == -vstar for i in adv.targets)


def test_sigma_needs_two_targets():
    with pytest.raises(HarnessFault):
        Simulation(P7, SigmaSchedulingAdversary(targets=[0]))


@pytest.mark.parametrize("seed", range(5))
def test_forced_keep_coin_is_unanimous(seed):
    p = derive_params(2, 0.5, 64, 4, 2)
    rep = run_protocol(p, ForcedKeepAdversary(), seed=seed, inputs=MIXED)
    assert rep.stats["forced_keep"] >= 1
    assert rep.stats["forced_keep_unanimous"] == rep.stats["forced_keep"]


def test_adversaries_are_replayable():
    for name in ("mirror-mimic", "sigma-scheduling"):
        a = epoch_sim(make_adversary(name), 11)[1]
        b = epoch_sim(make_adversary(name), 11)[1]
        assert a == b
