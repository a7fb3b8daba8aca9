"""Cohort ingest, synthetic generation, and split bookkeeping."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from musclebench import data
from musclebench.data import (
    Cohort,
    ColumnProfile,
    GenProfile,
    SubjectRecord,
    generate_synthetic_cohort,
    kfold_indices,
    load_cohort,
    make_split_plan,
    save_cohort,
    stratified_split,
)
from musclebench.errors import (
    ConfigError,
    DomainError,
    ParseError,
    SchemaError,
    SplitError,
)


def write_csv(tmp_path, text, name="cohort.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCohort:
    def test_three_row_file_with_missing_cell(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,weight_mg,force_mN\n"
            "Sham,4.0,47.0,11000\n"
            "CS,,41.0,9000\n"
            "CS,9.5,40.0,8800\n",
        )
        cohort = load_cohort(path)
        assert cohort.n == 3
        crp = cohort.columns(["crp"])[:, 0]
        assert math.isnan(crp[1])
        assert crp[0] == 4.0

    def test_accepts_numeric_condition_codes(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,weight_mg,force_mN\n"
            "0,4.0,47.0,11000\n"
            "1,9.5,41.0,9000\n",
        )
        cohort = load_cohort(path)
        assert list(cohort.condition_values()) == [0, 1]

    def test_unknown_condition_label(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,weight_mg,force_mN\nSmoke,4.0,47.0,11000\n",
        )
        with pytest.raises(SchemaError, match="Smoke"):
            load_cohort(path)

    def test_duplicate_column(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,crp,weight_mg,force_mN\nSham,4.0,4.0,47.0,11000\n",
        )
        with pytest.raises(SchemaError, match="duplicate"):
            load_cohort(path)

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,weight_mg,force_mN\n"
            "Sham,4.0,47.0,11000\n"
            "CS,9.5,41.0\n",
        )
        with pytest.raises(ParseError, match="line 3"):
            load_cohort(path)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,crp,weight_mg,force_mN\nSham,abc,47.0,11000\n",
        )
        with pytest.raises(ParseError, match="line 2"):
            load_cohort(path)

    def test_unknown_column_rejected(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,sparkle,weight_mg,force_mN\nSham,1.0,47.0,11000\n",
        )
        with pytest.raises(SchemaError, match="sparkle"):
            load_cohort(path)

    def test_header_requires_condition_and_target(self, tmp_path):
        path = write_csv(tmp_path, "crp,weight_mg\n4.0,47.0\n")
        with pytest.raises(SchemaError, match="condition"):
            load_cohort(path)
        path = write_csv(tmp_path, "condition,crp\nSham,4.0\n", name="c2.csv")
        with pytest.raises(SchemaError, match="target"):
            load_cohort(path)

    def test_quality_column_must_match_ratio(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,weight_mg,force_mN,quality\nSham,50.0,10000.0,123.0\n",
        )
        with pytest.raises(SchemaError, match="quality"):
            load_cohort(path)
        ok = write_csv(
            tmp_path,
            "condition,weight_mg,force_mN,quality\nSham,50.0,10000.0,200.0\n",
            name="ok.csv",
        )
        assert load_cohort(ok).target("quality")[0] == 200.0

    def test_zero_weight_is_domain_error(self, tmp_path):
        path = write_csv(
            tmp_path,
            "condition,weight_mg,force_mN\nSham,0.0,10000.0\n",
        )
        with pytest.raises(DomainError):
            load_cohort(path)

    def test_roundtrip_through_save(self, tmp_path):
        cohort = generate_synthetic_cohort(24, seed=5, profile=GenProfile(missing_rate=0.2))
        out = tmp_path / "cohort.csv"
        save_cohort(cohort, out)
        back = load_cohort(out)
        assert back.n == cohort.n
        for name in cohort.feature_names:
            a = cohort.columns([name])[:, 0]
            b = back.columns([name])[:, 0]
            assert np.array_equal(np.isnan(a), np.isnan(b))
            assert np.array_equal(a[~np.isnan(a)], b[~np.isnan(b)])
        assert np.array_equal(cohort.target("weight_mg"), back.target("weight_mg"))
        assert (tmp_path / "cohort.schema").exists()


class TestCohortAccess:
    def test_targets_cannot_be_read_as_features(self):
        cohort = generate_synthetic_cohort(8, seed=0)
        with pytest.raises(SchemaError):
            cohort.columns(["weight_mg"])
        with pytest.raises(SchemaError):
            cohort.columns(["condition"])

    def test_quality_is_force_over_weight(self):
        cohort = generate_synthetic_cohort(16, seed=3)
        q = cohort.target("quality")
        w = cohort.target("weight_mg")
        f = cohort.target("force_mN")
        assert np.allclose(q, f / w, rtol=1e-12)

    def test_empty_column_selection(self):
        cohort = generate_synthetic_cohort(8, seed=0)
        assert cohort.columns([]).shape == (8, 0)


class TestSyntheticGenerator:
    def test_deterministic_per_seed(self):
        a = generate_synthetic_cohort(50, seed=9)
        b = generate_synthetic_cohort(50, seed=9)
        for name in a.feature_names:
            assert np.array_equal(a.columns([name]), b.columns([name]))
        assert np.array_equal(a.target("weight_mg"), b.target("weight_mg"))
        c = generate_synthetic_cohort(50, seed=10)
        assert not np.array_equal(a.columns(["crp"]), c.columns(["crp"]))

    def test_group_effects_exceed_three_pooled_ses(self):
        # n=213, seed=7: CS higher CRP/neutrophils, lower weight, wide margin
        cohort = generate_synthetic_cohort(213, seed=7)
        cond = cohort.condition_values()

        def margin(values, flip=False):
            a, b = values[cond == 1], values[cond == 0]
            se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
            diff = (b.mean() - a.mean()) if flip else (a.mean() - b.mean())
            return diff / se

        assert margin(cohort.columns(["crp"])[:, 0]) > 3
        assert margin(cohort.columns(["balf_neutrophils"])[:, 0]) > 3
        assert margin(cohort.target("weight_mg"), flip=True) > 3
        assert margin(cohort.target("force_mN"), flip=True) > 3

    def test_biomarkers_nonnegative(self):
        cohort = generate_synthetic_cohort(500, seed=21)
        mat = cohort.columns(list(cohort.feature_names))
        assert np.all(mat >= 0)
        assert np.all(cohort.target("weight_mg") > 0)
        assert np.all(cohort.target("force_mN") > 0)

    def test_zero_noise_makes_sham_records_identical(self):
        cols = {
            name: ColumnProfile(p.sham_mean, p.cs_mean, 0.0, p.family)
            for name, p in data._default_column_profiles().items()
        }
        cohort = generate_synthetic_cohort(12, seed=4, profile=GenProfile(columns=cols))
        cond = cohort.condition_values()
        sham_rows = cohort.columns(list(cohort.feature_names))[cond == 0]
        assert np.all(sham_rows == sham_rows[0])
        w = cohort.target("weight_mg")[cond == 0]
        assert np.all(w == w[0])

    def test_more_weight_suppression_lowers_cs_mean(self):
        def with_cs_weight(mean):
            cols = data._default_column_profiles()
            cols["weight_mg"] = ColumnProfile(47.0, mean, 4.0, family="normal")
            return GenProfile(columns=cols)

        a = generate_synthetic_cohort(60, seed=2, profile=with_cs_weight(41.0))
        b = generate_synthetic_cohort(60, seed=2, profile=with_cs_weight(35.0))
        cond = a.condition_values()
        assert (
            b.target("weight_mg")[cond == 1].mean()
            < a.target("weight_mg")[cond == 1].mean()
        )

    def test_missing_rate_masks_biomarkers_only(self):
        cohort = generate_synthetic_cohort(80, seed=6, profile=GenProfile(missing_rate=0.3))
        mat = cohort.columns(list(cohort.feature_names))
        assert np.isnan(mat).any()
        assert not np.isnan(cohort.target("weight_mg")).any()
        assert not np.isnan(cohort.target("force_mN")).any()

    def test_negative_noise_rejected(self):
        with pytest.raises(ConfigError):
            ColumnProfile(1.0, 2.0, -0.1)

    def test_nonpositive_lognormal_mean_rejected(self):
        with pytest.raises(ConfigError):
            ColumnProfile(0.0, 2.0, 0.5)

    def test_bad_rates_rejected(self):
        with pytest.raises(ConfigError):
            GenProfile(missing_rate=1.0)
        with pytest.raises(ConfigError):
            GenProfile(cs_fraction=0.0)

    def test_tiny_n_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic_cohort(3, seed=0)


class TestStratifiedSplit:
    def test_213_at_one_fifth_gives_43_test(self):
        cohort = generate_synthetic_cohort(213, seed=7)
        plan = stratified_split(cohort, 0.2, seed=11)
        assert len(plan.test_idx) == 43
        assert len(plan.train_idx) == 170
        cond = cohort.condition_values(list(plan.test_idx))
        # largest remainder: Sham 106 -> 21, CS 107 -> 22
        assert int((cond == 0).sum()) == 21
        assert int((cond == 1).sum()) == 22

    def test_balanced_ten_gives_one_per_condition(self):
        records = [
            SubjectRecord(condition=i % 2, features={"crp": float(i)}, weight_mg=40.0, force_mN=9e3)
            for i in range(10)
        ]
        cohort = Cohort(records)
        plan = stratified_split(cohort, 0.2, seed=0)
        cond = cohort.condition_values(list(plan.test_idx))
        assert len(plan.test_idx) == 2
        assert int((cond == 0).sum()) == 1
        assert int((cond == 1).sum()) == 1

    def test_deterministic_and_disjoint(self):
        cohort = generate_synthetic_cohort(57, seed=1)
        a = stratified_split(cohort, 0.25, seed=5)
        b = stratified_split(cohort, 0.25, seed=5)
        assert a.train_idx == b.train_idx and a.test_idx == b.test_idx
        combined = set(a.train_idx) | set(a.test_idx)
        assert combined == set(range(57))
        assert not set(a.train_idx) & set(a.test_idx)
        c = stratified_split(cohort, 0.25, seed=6)
        assert c.test_idx != a.test_idx

    def test_small_stratum_is_split_error(self):
        records = [
            SubjectRecord(condition=0, features={"crp": 1.0}, weight_mg=40.0, force_mN=9e3)
            for _ in range(5)
        ] + [SubjectRecord(condition=1, features={"crp": 2.0}, weight_mg=40.0, force_mN=9e3)]
        cohort = Cohort(records)
        with pytest.raises(SplitError):
            stratified_split(cohort, 0.2, seed=0)

    def test_bad_fraction_rejected(self):
        cohort = generate_synthetic_cohort(20, seed=0)
        with pytest.raises(SplitError):
            stratified_split(cohort, 0.0, seed=0)
        with pytest.raises(SplitError):
            stratified_split(cohort, 1.0, seed=0)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=12, max_value=240),
        frac=st.floats(min_value=0.1, max_value=0.4),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_per_stratum_counts_within_one_of_proportional(self, n, frac, seed):
        cohort = generate_synthetic_cohort(n, seed=1)
        plan = stratified_split(cohort, frac, seed=seed)
        cond = cohort.condition_values()
        test_cond = cohort.condition_values(list(plan.test_idx))
        for level in (0, 1):
            n_s = int((cond == level).sum())
            t_s = int((test_cond == level).sum())
            assert abs(t_s - n_s * frac) < 1.0


class TestKFold:
    def make_train(self, n=170):
        cohort = generate_synthetic_cohort(n + 43, seed=7)
        plan = stratified_split(cohort, 43 / (n + 43), seed=11)
        return cohort, plan

    def test_85_85_train_gives_17_17_folds(self):
        cohort, plan = self.make_train()
        cond = cohort.condition_values()
        folds = kfold_indices(plan.train_idx, cond, 5, seed=3)
        assert len(folds) == 5
        for _, val in folds:
            vc = cohort.condition_values(list(val))
            assert int((vc == 0).sum()) == 17
            assert int((vc == 1).sum()) == 17

    def test_folds_partition_training_half(self):
        cohort, plan = self.make_train()
        folds = kfold_indices(plan.train_idx, cohort.condition_values(), 5, seed=3)
        all_val = [i for _, val in folds for i in val]
        assert sorted(all_val) == sorted(plan.train_idx)
        for fit, val in folds:
            assert not set(fit) & set(val)
            assert sorted(set(fit) | set(val)) == sorted(plan.train_idx)
            assert not set(val) & set(plan.test_idx)

    def test_fold_sizes_differ_by_at_most_one_per_stratum(self):
        cohort = generate_synthetic_cohort(97, seed=2)
        plan = stratified_split(cohort, 0.2, seed=1)
        folds = kfold_indices(plan.train_idx, cohort.condition_values(), 5, seed=9)
        for level in (0, 1):
            sizes = [
                int((cohort.condition_values(list(val)) == level).sum())
                for _, val in folds
            ]
            assert max(sizes) - min(sizes) <= 1

    def test_too_many_folds_is_split_error(self):
        cohort = generate_synthetic_cohort(12, seed=0)
        plan = stratified_split(cohort, 0.25, seed=0)
        with pytest.raises(SplitError):
            kfold_indices(plan.train_idx, cohort.condition_values(), 8, seed=0)

    def test_make_split_plan_records_seeds(self):
        cohort = generate_synthetic_cohort(60, seed=4)
        plan = make_split_plan(cohort, 0.2, 5, seed=11, cv_seed=13)
        assert plan.seed == 11 and plan.cv_seed == 13
        assert len(plan.folds) == 5
        assert plan.train_hash == plan.train_hash  # stable property
