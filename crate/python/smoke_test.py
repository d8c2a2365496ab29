"""Smoke test for the pydalab extension module."""

import math

import pydalab as dl


def main():
    cfg = dl.MarketConfig(n=50, alpha=0.1, d=8, model="candidate_lists", seed=3)
    assert cfg.m == 55

    market = dl.sample_market(cfg)
    assert market.num_candidates == 55 and market.num_jobs == 50

    res = dl.run_da(market, "cpda", trace=True)
    assert dl.find_blocking_pairs(market, res.matching) == []
    assert res.total_proposals == sum(res.proposals_made)
    assert res.trace_text().count("\n") == res.total_proposals
    assert res.rejection_chains_jsonl()

    lazy = dl.run_da_lazy(cfg, "cpda")
    assert len(lazy.matching) + len(lazy.unmatched_receivers) == 50

    tiny = dl.Market([[0, 1], [1, 0]], [[1, 0], [0, 1]])
    assert dl.enumerate_stable_matchings(tiny) == [[(0, 0), (1, 1)], [(0, 1), (1, 0)]]
    blocked = dl.find_blocking_pairs(tiny, [(0, 0)])
    assert (1, 1, "mutual_preference") in blocked

    assert abs(dl.win_prob_closed_form(0.2, 0.5, 0.3, 2) - 0.1 / 0.275) < 1e-12
    frac, lo, hi, _ = dl.simulate_game(0.2, 0.5, 0.3, 2, 20000, seed=1)
    assert lo <= dl.win_prob_exact(0.2, 0.5, 0.3, 2) <= hi

    counts, q = dl.balls_in_bins(10, 25, seed=2)
    assert sum(counts) == 25 and 0.0 <= q <= 1.0

    assert abs(dl.predicted_threshold(10_000, 0.0) - math.log(10_000) ** 2) < 1e-9
    full = dl.MarketConfig(n=20, alpha=0.0, d=20, seed=1)
    assert dl.estimate_perfect_prob(full, 10)[0] == 1.0

    try:
        dl.MarketConfig(n=5, alpha=0.0, d=50)
    except ValueError:
        pass
    else:
        raise AssertionError("d > n must be rejected")

    print("pydalab smoke test passed")


if __name__ == "__main__":
    main()
