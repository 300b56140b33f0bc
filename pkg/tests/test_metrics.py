import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirobid.metrics import (
    DayScore,
    MetricsConfig,
    aggregate_report,
    competitive_ratio,
    cr_at_gamma,
    tacr,
    tolerance_level,
)

CFG = MetricsConfig()


def score(U, U_star, roi_over_L, L=2.0, mech="GSP", split="test-iid", B=1e9):
    cost = U / (roi_over_L * L) if U > 0 else 0.0
    return DayScore(0, split, mech, U, U_star, cost, L, B)


class TestCompetitiveRatio:
    def test_values(self):
        assert competitive_ratio(50, 100) == 0.5
        assert competitive_ratio(0, 100) == 0.0
        assert competitive_ratio(105, 100) == 1.05

    def test_zero_expert(self):
        with pytest.raises(ValueError):
            competitive_ratio(1.0, 0.0)


class TestTolerance:
    def test_feasible(self):
        assert tolerance_level(2.0, 2.0) == 0 and tolerance_level(5.0, 2.0) == 0

    def test_one_point(self):
        assert tolerance_level(0.99 * 3.0, 3.0) == 1

    def test_two_and_a_half_points(self):
        assert tolerance_level(0.975 * 3.0, 3.0) == 3

    def test_infinite_roi(self):
        assert tolerance_level(float("inf"), 1.0) == 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MetricsConfig(gamma=1.0)
        with pytest.raises(ValueError):
            MetricsConfig(zeta=-0.1)


class TestTacr:
    def test_feasible_day(self):
        assert abs(tacr([score(80, 100, 1.2)]) - 0.8) <= 1e-12

    def test_discounted_violation(self):
        assert abs(tacr([score(105, 100, 0.99)]) - 1.0) <= 1e-12

    def test_beyond_tolerance(self):
        assert tacr([score(105, 100, 0.97)]) == 0.0
        # 2.5 points is also outside a 2% tolerance
        assert tacr([score(105, 100, 0.975)]) == 0.0

    def test_zero_expert_days_excluded(self):
        s = [score(80, 100, 1.2), DayScore(1, "test-iid", "GSP", 0.0, 0.0, 0.0, 1.0, 1.0)]
        assert tacr(s) == pytest.approx(0.8)
        assert tacr([DayScore(1, "test-iid", "GSP", 0.0, 0.0, 0.0, 1.0, 1.0)]) is None

    def test_cr_undiscounted(self):
        assert cr_at_gamma([score(105, 100, 0.99)]) == pytest.approx(1.05)

    @given(st.floats(0, 200), st.floats(1, 200), st.floats(0.9, 1.5), st.floats(0.1, 10))
    def test_cr_at_least_tacr(self, U, U_star, r, L):
        s = [score(U, U_star, r, L)]
        assert cr_at_gamma(s) >= tacr(s) >= 0.0

    @given(st.floats(1, 200), st.floats(1, 200), st.floats(0.9, 1.5), st.floats(0.01, 100))
    def test_scale_invariance(self, U, U_star, r, c):
        a = score(U, U_star, r)
        b = DayScore(0, a.split, a.mechanism, U * c, U_star * c, a.cost * c, a.L, a.B * c)
        assert tacr([a]) == pytest.approx(tacr([b]), rel=1e-9, abs=1e-12)
        assert cr_at_gamma([a]) == pytest.approx(cr_at_gamma([b]), rel=1e-9, abs=1e-12)


class TestReport:
    def runs(self, values):
        return [("m", [score(100 * v, 100, 1.1)]) for v in values]

    def test_single_run(self):
        rep = aggregate_report(self.runs([0.7]))
        row = [r for r in rep.summary() if r["group"] == "all"][0]
        assert row["mTACR"] == row["meanTACR"] == pytest.approx(0.7)

    def test_median_and_mean(self):
        rep = aggregate_report(self.runs([0.2, 0.4, 0.9]))
        row = [r for r in rep.summary() if r["group"] == "all"][0]
        assert row["mTACR"] == pytest.approx(0.4) and row["meanTACR"] == pytest.approx(0.5)
        assert rep.median("m") == pytest.approx(0.4)

    def test_missing_groups_absent(self):
        rep = aggregate_report(self.runs([0.5]))
        groups = {r["group"] for r in rep.summary()}
        assert "MIX" not in groups and "test-ood" not in groups
        assert rep.median("m", "MIX") is None

    def test_serializations_stable(self):
        rep = aggregate_report(self.runs([0.2, 0.4]))
        assert rep.to_json() == aggregate_report(self.runs([0.2, 0.4])).to_json()
        lines = rep.to_csv().splitlines()
        assert lines[0].startswith("method,group,runs,mTACR")
        assert json.loads(rep.to_json())["gamma"] == 0.02

    def test_day_record(self):
        d = score(105, 100, 0.99).to_dict(CFG)
        assert d["level"] == 1 and not d["feasible"]
        assert np.isclose(d["tacr"], 1.0)
