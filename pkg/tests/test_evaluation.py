import numpy as np
import pytest

from histgdp.data_ingest import Location, LocationTable
from histgdp.errors import ValidationError
from histgdp.evaluation import (
    SplitMetrics,
    evaluate_models,
    load_proxy_csv,
    proxy_correlation,
    run_single_split,
    split_countries,
    summarize_performance,
    write_evaluation_csv,
    write_evaluation_summary,
)
from histgdp.features import build_static_features
from histgdp.pipeline import EstimateRecord, GatingPolicy
from histgdp.rng import child_seed
from conftest import small_test_config


@pytest.fixture
def ten_countries():
    entries = [Location(f"C{i}", f"C{i}", "country", None, "Zone") for i in range(10)]
    entries.append(Location("C0-R0", "r", "region", "C0", ""))
    entries.append(Location("C0-R1", "r", "region", "C0", ""))
    return LocationTable(entries)


class TestSplitCountries:
    def test_fraction_count(self, ten_countries):
        spec = split_countries(ten_countries.countries(), 0.2, seed=1,
                               locations=ten_countries)
        assert len(spec.test_countries) == 2

    def test_regions_attached(self, ten_countries):
        for seed in range(30):
            spec = split_countries(ten_countries.countries(), 0.2, seed=seed,
                                   locations=ten_countries)
            if "C0" in spec.test_countries:
                assert "C0-R0" in spec.test_locations
                assert "C0-R1" in spec.test_locations
                break
        else:
            pytest.fail("C0 never drawn in 30 seeds")

    def test_deterministic(self, ten_countries):
        a = split_countries(ten_countries.countries(), 0.2, seed=5)
        b = split_countries(ten_countries.countries(), 0.2, seed=5)
        assert a == b

    def test_too_few_countries(self):
        with pytest.raises(ValidationError):
            split_countries(["A", "B", "C"], 0.2, seed=0)

    def test_ceil_rule(self):
        spec = split_countries([f"C{i}" for i in range(7)], 0.2, seed=3)
        assert len(spec.test_countries) == 2  # ceil(1.4)


def metrics(i, r2b, r2f, maeb, maef):
    return SplitMetrics(
        split_index=i, seed=i, r2_baseline=r2b, r2_full=r2f,
        mae_baseline=maeb, mae_full=maef, n_test_rows=10,
    )


class TestSummaries:
    def test_degenerate_equality_gives_p_one(self):
        # a full model restricted to the baseline regressors yields
        # identical distributions; the rank test must report p = 1
        splits = [metrics(i, 0.8 + 0.01 * i, 0.8 + 0.01 * i, 0.3, 0.3) for i in range(6)]
        dist = summarize_performance(splits)
        assert dist.kw["r2"]["h"] == 0.0
        assert dist.kw["r2"]["p"] == 1.0
        assert dist.medians["r2_baseline"] == dist.medians["r2_full"]

    def test_label_swap_symmetry(self):
        splits = [metrics(i, 0.7 + 0.02 * i, 0.85 + 0.01 * i, 0.35, 0.22) for i in range(7)]
        swapped = [
            metrics(s.split_index, s.r2_full, s.r2_baseline, s.mae_full, s.mae_baseline)
            for s in splits
        ]
        a = summarize_performance(splits)
        b = summarize_performance(swapped)
        assert a.medians["r2_baseline"] == b.medians["r2_full"]
        assert a.medians["mae_full"] == b.medians["mae_baseline"]
        assert a.kw["r2"]["h"] == pytest.approx(b.kw["r2"]["h"], abs=1e-12)

    def test_failed_splits_counted_not_dropped(self):
        splits = [metrics(0, 0.8, 0.9, 0.3, 0.2),
                  SplitMetrics(split_index=1, seed=1, failed="boom")]
        dist = summarize_performance(splits)
        assert dist.n_failed == 1
        assert len(dist.splits) == 2


class TestEvaluateModels:
    def test_full_beats_baseline_on_synthetic_world(self, small_world):
        config = small_test_config(n_splits=3, threads=1)
        dist = evaluate_models(small_world.dataset, config, n_splits=3, master_seed=3)
        assert dist.n_failed == 0
        assert dist.medians["r2_full"] > dist.medians["r2_baseline"]
        assert dist.medians["mae_full"] < dist.medians["mae_baseline"]

    def test_single_split_matches_manual_run(self, small_world):
        config = small_test_config(n_splits=1)
        dist = evaluate_models(small_world.dataset, config, n_splits=1, master_seed=9)
        statics = {
            year: build_static_features(year, small_world.dataset)
            for year in (1300, 1350, 1400, 1450, 1500, 1550, 1600, 1650, 1700, 1750)
        }
        manual = run_single_split(
            small_world.dataset, config, statics, 0, 9, GatingPolicy.from_config(config)
        )
        auto = dist.splits[0]
        assert auto.seed == manual.seed == child_seed(9, "split", 0)
        assert auto.r2_full == manual.r2_full
        assert auto.r2_baseline == manual.r2_baseline
        assert auto.mae_full == manual.mae_full

    def test_deterministic_and_thread_invariant(self, small_world):
        config1 = small_test_config(n_splits=2, threads=1)
        config2 = small_test_config(n_splits=2, threads=4)
        a = evaluate_models(small_world.dataset, config1, master_seed=4)
        b = evaluate_models(small_world.dataset, config2, master_seed=4)
        assert a.splits == b.splits

    def test_distinct_split_seeds(self, small_world):
        config = small_test_config(n_splits=4)
        dist = evaluate_models(small_world.dataset, config, n_splits=4, master_seed=1)
        seeds = [s.seed for s in dist.splits]
        assert len(set(seeds)) == 4

    def test_no_leakage_between_train_and_test(self, small_world):
        # the structural assert inside run_single_split guards this; here we
        # confirm the split spec itself separates regions with their country
        locations = small_world.dataset.locations
        spec = split_countries(locations.countries(), 0.25, seed=2, locations=locations)
        for region in (r for c in spec.test_countries for r in locations.regions_of(c)):
            assert region in spec.test_locations


def make_estimates(values, kinds):
    return [
        EstimateRecord(
            location_id=f"L{i}", year=1500, gdp_pc=v, ci_low=v, ci_high=v, kind=k
        )
        for i, (v, k) in enumerate(zip(values, kinds))
    ]


class TestProxyCorrelation:
    def test_identical_series(self):
        ests = make_estimates([100.0, 200.0, 300.0, 400.0], ["source"] * 4)
        rows = [(e.location_id, 1500, e.gdp_pc) for e in ests]
        res = proxy_correlation(ests, rows)
        assert res.r == pytest.approx(1.0)
        assert res.n == 4

    def test_negated_series(self):
        ests = make_estimates([100.0, 200.0, 300.0], ["estimate"] * 3)
        rows = [(e.location_id, 1500, -e.gdp_pc) for e in ests]
        res = proxy_correlation(ests, rows)
        assert res.r == pytest.approx(-1.0)

    def test_noise_has_small_correlation(self):
        rng = np.random.default_rng(0)
        values = rng.lognormal(7, 0.5, size=200)
        ests = make_estimates(values.tolist(), ["estimate"] * 200)
        rows = [(e.location_id, 1500, float(rng.normal())) for e in ests]
        res = proxy_correlation(ests, rows)
        assert abs(res.r) < 0.3

    def test_per_kind_split(self):
        ests = make_estimates(
            [100.0, 200.0, 300.0, 400.0, 500.0, 600.0],
            ["source", "source", "source", "estimate", "estimate", "estimate"],
        )
        rows = [(e.location_id, 1500, 2 * e.gdp_pc) for e in ests]
        res = proxy_correlation(ests, rows)
        assert res.n_source == 3 and res.n_estimate == 3
        assert res.r_source == pytest.approx(1.0)
        assert res.r_estimate == pytest.approx(1.0)

    def test_log_transform(self):
        ests = make_estimates([10.0, 100.0, 1000.0, 10000.0], ["source"] * 4)
        rows = [(e.location_id, 1500, float(i)) for i, e in enumerate(ests)]
        res = proxy_correlation(ests, rows, transform="log10")
        assert res.r == pytest.approx(1.0)

    def test_too_few_matches(self):
        ests = make_estimates([1.0, 2.0], ["source", "source"])
        with pytest.raises(ValidationError):
            proxy_correlation(ests, [("L0", 1500, 1.0), ("L1", 1500, 2.0)])


class TestOutputs:
    def test_files_written(self, small_world, tmp_path):
        config = small_test_config(n_splits=2)
        dist = evaluate_models(small_world.dataset, config, n_splits=2, master_seed=5)
        csv_path = tmp_path / "evaluation.csv"
        write_evaluation_csv(dist, csv_path)
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("split_index,seed,r2_baseline")
        summary_path = tmp_path / "evaluation_summary.json"
        write_evaluation_summary(dist, summary_path)
        assert "kruskal_wallis" in summary_path.read_text()

    def test_proxy_csv_round_trip(self, tmp_path):
        path = tmp_path / "proxy.csv"
        path.write_text("location_id,year,value\nA,1500,0.35\nB,1600,0.5\n")
        rows = load_proxy_csv(path)
        assert rows == [("A", 1500, 0.35), ("B", 1600, 0.5)]
