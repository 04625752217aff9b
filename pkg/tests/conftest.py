import pytest

from histgdp.config import RunConfig
from histgdp.synthetic import make_synthetic_world

# Registry for acceptance-criterion outcomes; printed in the terminal
# summary so every criterion shows one pass/fail line.
ACCEPTANCE_RESULTS = []


def record_acceptance(criterion, label, passed, detail=""):
    ACCEPTANCE_RESULTS.append((criterion, label, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, label, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else ("SKIP" if passed is None else "FAIL")
        line = f"criterion {criterion:>2} {label}: {status}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


def small_test_config(**overrides):
    base = dict(
        alpha_grid=(0.5, 1.0),
        n_lambda=12,
        lambda_ratio=1e-2,
        k_folds=3,
        bootstrap_samples=50,
        n_splits=3,
        seed=7,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_world():
    return make_synthetic_world(
        n_countries=8,
        n_occupations=4,
        period_ids=("late_middle_ages", "early_modern"),
        seed=11,
        n_regions_per_country=2,
        n_supra=2,
        label_fraction=0.6,
        true_coefficients={
            "births.occ00": 0.45,
            "deaths.occ02": -0.35,
            "immigrants.total": 0.40,
        },
    )


@pytest.fixture(scope="session")
def small_config():
    return small_test_config()


@pytest.fixture(scope="session")
def small_run(small_world, small_config):
    from histgdp.pipeline import run_full

    return run_full(small_world.dataset, small_config)
