"""Smoke test for the `rigidity` extension module.

Build and install first, e.g.
    maturin develop --release -m crates/python/Cargo.toml
then run
    python python/smoke_test.py
"""

import json
import math
import os
import tempfile

import rigidity


def main():
    filtered, flags = rigidity.filter_sales_a([1000, 1000, 800, 800, 1000, 1000])
    assert filtered == [1000] * 6, filtered
    assert flags == [False, False, True, True, False, False], flags

    ref = rigidity.reference_prices([500] * 6 + [700] + [500] * 6)
    assert ref == [500] * 13, ref

    assert abs(rigidity.implied_duration(0.1383) - 6.72) < 0.01
    assert math.isinf(rigidity.implied_duration(0.0))
    weeks, kept, dropped = rigidity.expected_duration([0.5, 0.0])
    assert (kept, dropped) == (1, 1) and abs(weeks - 1 / math.log(2)) < 1e-12

    assert rigidity.chi2_proportions(30, 100, 10, 100)[0] == 12.5
    w, z, p = rigidity.wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    assert abs(z + 1.9640) < 1e-4
    assert rigidity.kurtosis([-1, -1, 1, 1]) == 1.0
    assert rigidity.fk_index([[True, False], [True, True], [False, False]]) == 1 / 3

    try:
        rigidity.implied_duration(1.5)
    except ArithmeticError as e:
        assert "statistics" in str(e)
    else:
        raise AssertionError("expected ArithmeticError")

    panel = rigidity.PricePanel.simulate("canadian", 7)
    assert panel.n_observations == 15912, panel
    assert panel.stores == ["edlp", "hilo", "hyb"]
    counts = {s: c / n for s, c, n in panel.change_counts("transaction")}
    assert counts["hilo"] > counts["edlp"], counts

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "panel.csv")
        panel.to_csv(path)
        again = rigidity.PricePanel.load(path)
        assert again.products == panel.products

    bundle = json.loads(panel.analyze("seed = 7\n[magnitude]\nbootstrap_replicates = 50\n"))
    assert bundle["seed"] == 7
    assert {row["kind"] for row in bundle["rigidity_store"]} >= {"transaction", "posted_regular"}
    print("rigidity smoke test passed:", panel)


if __name__ == "__main__":
    main()
