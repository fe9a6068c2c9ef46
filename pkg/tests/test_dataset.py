"""
Tests for crash record ingestion

Tests:
1. Fixture classification counts and level frequencies
2. Disengagement linkage, including ambiguous matches
3. Discretization boundaries and range checks
4. Dummy coding and grouping for each nesting
"""

import datetime as dt

import numpy as np
import pandas as pd
import pytest

from src.core.dataset import (
    CrashRecord,
    DisengagementRecord,
    DiscretizationRule,
    DrivingMode,
    Initiator,
    VariableCatalog,
    classify_mode,
    describe_continuous,
    discretize,
    encode_design,
    expand_terms,
    link_disengagements,
    load_disengagements,
    load_records,
    partition_by_mode,
    tabulate_levels,
)
from src.core.errors import (
    AmbiguousMatch,
    CatalogError,
    ConstantColumn,
    DataError,
    DuplicateCrashId,
    MalformedNumeric,
    MissingColumn,
    NegativeCount,
    OutOfRangeContinuous,
    UnclassifiableRecord,
    UndeclaredLevel,
    UnknownColumn,
)
from src.core.model import HierarchicalModelSpec


@pytest.fixture
def partition(fixtures_dir, catalog):
    records = load_records(fixtures_dir / "crashes.csv", catalog)
    diseng = load_disengagements(fixtures_dir / "disengagements.csv")
    return partition_by_mode(link_disengagements(records, diseng))


def _count(frequency, variable, level, mode):
    row = frequency[(frequency["Variable"] == variable) & (frequency["Level"] == level)]
    assert len(row) == 1, f"{variable}={level} missing from the frequency table"
    return int(row.iloc[0][f"{mode} Num"])


def _record(crash_id="C1", hints=(), date=dt.date(2020, 1, 1), **raw):
    return CrashRecord(
        crash_id=crash_id,
        date=date,
        manufacturer="Waymo",
        vehicle_type="Chrysler Pacifica",
        vehicle_year=2019,
        mode_hints=frozenset(hints),
        raw_fields=raw,
    )


class TestFixtureIngestion:
    """The bundled fixture reproduces the published mode split and marginals."""

    def test_mode_counts(self, partition):
        counts = partition.counts()
        assert counts["Autonomous"] == 96
        assert counts["Conventional"] == 84
        assert counts["Excluded"] == 2

    def test_level_frequencies(self, partition, catalog):
        frequency = tabulate_levels(partition, catalog)
        assert _count(frequency, "injury", "Yes", "Autonomous") == 22
        assert _count(frequency, "injury", "Yes", "Conventional") == 14
        assert _count(frequency, "crash_type", "Rear-end", "Autonomous") == 57
        assert _count(frequency, "light", "Dark", "Conventional") == 5
        assert _count(frequency, "dvf", "≥40040", "Autonomous") == 5
        assert _count(frequency, "schools", ">4", "Autonomous") == 20
        assert _count(frequency, "driveways", "<4", "Conventional") == 51

    def test_percent_column(self, partition, catalog):
        frequency = tabulate_levels(partition, catalog)
        row = frequency[(frequency["Variable"] == "injury") & (frequency["Level"] == "Yes")].iloc[0]
        assert row["Autonomous Percent"] == pytest.approx(100.0 * 22 / 96)

    def test_disengagement_marginals(self, partition, catalog):
        frequency = tabulate_levels(partition, catalog)
        assert _count(frequency, "disengagement", "Presence", "Autonomous") == 36
        assert _count(frequency, "disengagement", "Presence", "Conventional") == 0
        assert _count(frequency, "initiator", "AV system", "Autonomous") == 1
        assert _count(frequency, "initiator", "Test driver", "Autonomous") == 35
        assert _count(frequency, "unwanted_other_participant", "Presence", "Autonomous") == 19
        assert _count(frequency, "unwanted_av_movement", "Presence", "Autonomous") == 1
        assert _count(frequency, "changing_lanes", "Presence", "Autonomous") == 32
        assert _count(frequency, "deceleration", "Presence", "Autonomous") == 20

    def test_reference_levels_marked(self, partition, catalog):
        frequency = tabulate_levels(partition, catalog)
        references = frequency[frequency["Reference"]]
        assert set(zip(references["Variable"], references["Level"])) >= {("injury", "No"), ("dvf", "≥40040")}

    def test_describe_continuous_within_ranges(self, partition, catalog):
        table = describe_continuous(partition.autonomous + partition.conventional, catalog)
        speed = table[table["Variable"] == "speed_limit"].iloc[0]
        assert 15 <= speed["Min"] <= speed["Max"] <= 30
        assert list(table.columns) == ["Variable", "Description", "Mean", "S.D.", "Min", "Max"]


class TestLoadRecords:
    """Malformed crash tables are rejected with precise errors."""

    def _write(self, tmp_path, fixtures_dir, edit):
        frame = pd.read_csv(fixtures_dir / "crashes.csv", dtype=str, keep_default_na=False)
        frame = edit(frame)
        path = tmp_path / "crashes.csv"
        frame.to_csv(path, index=False)
        return path

    def test_missing_column(self, tmp_path, fixtures_dir, catalog):
        path = self._write(tmp_path, fixtures_dir, lambda f: f.drop(columns=["slope"]))
        with pytest.raises(MissingColumn):
            load_records(path, catalog)

    def test_unknown_column(self, tmp_path, fixtures_dir, catalog):
        path = self._write(tmp_path, fixtures_dir, lambda f: f.assign(mystery="1"))
        with pytest.raises(UnknownColumn):
            load_records(path, catalog)

    def test_malformed_numeric_reports_row_and_column(self, tmp_path, fixtures_dir, catalog):
        def edit(frame):
            frame.loc[4, "street_width"] = "wide"
            return frame

        path = self._write(tmp_path, fixtures_dir, edit)
        with pytest.raises(MalformedNumeric) as excinfo:
            load_records(path, catalog)
        assert excinfo.value.row == 5
        assert excinfo.value.column == "street_width"

    def test_duplicate_crash_id(self, tmp_path, fixtures_dir, catalog):
        def edit(frame):
            frame.loc[1, "crash_id"] = frame.loc[0, "crash_id"]
            return frame

        path = self._write(tmp_path, fixtures_dir, edit)
        with pytest.raises(DuplicateCrashId):
            load_records(path, catalog)

    def test_unlisted_category_reads_as_unknown(self, tmp_path, fixtures_dir, catalog):
        def edit(frame):
            frame.loc[0, "weather"] = "Hail"
            return frame

        records = load_records(self._write(tmp_path, fixtures_dir, edit), catalog)
        assert records[0].raw_fields["weather"] == "Unknown"

    def test_empty_file_reads_as_no_records(self, tmp_path, catalog):
        path = tmp_path / "crashes.csv"
        path.write_bytes(b"")
        assert load_records(path, catalog) == []

    def test_header_only_file(self, tmp_path, fixtures_dir, catalog):
        path = self._write(tmp_path, fixtures_dir, lambda f: f.iloc[0:0])
        assert load_records(path, catalog) == []

    def test_empty_disengagement_file(self, tmp_path):
        path = tmp_path / "disengagements.csv"
        path.write_bytes(b"")
        assert load_disengagements(path) == []

    def test_invalid_utf8(self, tmp_path, catalog):
        path = tmp_path / "crashes.csv"
        path.write_bytes(b"crash_id,date\nC1,2020-01-01\xff\xfe\n")
        with pytest.raises(DataError, match="utf-8"):
            load_records(path, catalog)

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "disengagements.csv"
        path.write_text("date,manufacturer\n2020-01-01,Waymo\n2020-01-02,Waymo,extra,cells\n", encoding="utf-8")
        with pytest.raises(DataError, match="malformed CSV"):
            load_disengagements(path)


class TestLinkage:
    """Crashes pick up disengagement details on an exact key match."""

    def _diseng(self, initiator=Initiator.TEST_DRIVER, causes=("changing_lanes",), date=dt.date(2020, 1, 1)):
        return DisengagementRecord(date=date, manufacturer="Waymo", vehicle_type="Chrysler Pacifica",
                                   initiator=initiator, cause_flags=frozenset(causes))

    def test_match_copies_initiator_and_causes(self):
        (linked,) = link_disengagements([_record()], [self._diseng(Initiator.SYSTEM)])
        assert linked.disengagement_present
        assert linked.raw_fields["initiator"] == "AV system"
        assert linked.raw_fields["changing_lanes"] == "Presence"
        assert linked.raw_fields["deceleration"] == "Absence"
        assert classify_mode(linked) is DrivingMode.AUTONOMOUS

    def test_date_mismatch_does_not_link(self):
        (linked,) = link_disengagements([_record(hints=("manual_stated",))],
                                        [self._diseng(date=dt.date(2020, 1, 3))])
        assert not linked.disengagement_present
        assert classify_mode(linked) is DrivingMode.CONVENTIONAL

    def test_ambiguous_match(self):
        records = [self._diseng(), self._diseng(Initiator.SYSTEM)]
        (linked,) = link_disengagements([_record()], records)
        assert linked.ambiguous_match
        with pytest.raises(AmbiguousMatch):
            link_disengagements([_record()], records, strict=True)

    def test_narrative_without_initiator_defaults_to_test_driver(self):
        crash = _record(hints=("disengagement_mentioned",))
        (linked,) = link_disengagements([crash], [])
        assert linked.initiator is Initiator.TEST_DRIVER


class TestClassifyMode:
    def test_engaged_wins_over_manual(self):
        record = _record(hints=("engaged_throughout", "manual_stated"))
        assert classify_mode(record) is DrivingMode.AUTONOMOUS

    def test_unclassifiable(self):
        with pytest.raises(UnclassifiableRecord):
            classify_mode(_record())

    def test_partition_excludes_unclassifiable(self):
        partition = partition_by_mode([_record("A", ("engaged_throughout",)), _record("B")])
        assert [r.crash_id for r in partition.autonomous] == ["A"]
        assert partition.excluded[0][0] == "B"


class TestDiscretize:
    """Boundary values land on the level named by the catalog rule."""

    @pytest.mark.parametrize("name, value, level", [
        ("schools", 4, "≤4"),
        ("schools", 5, ">4"),
        ("driveways", 4, "≥4"),
        ("driveways", 3, "<4"),
        ("dvf", 3418, "[3418,11982)"),
        ("dvf", 3417.5, "<3418"),
        ("dvf", 40040, "≥40040"),
        ("slope", 3, "≤3%"),
    ])
    def test_boundaries(self, catalog, name, value, level):
        assert discretize(_record(**{name: float(value)}), catalog)[name] == level

    def test_out_of_range(self, catalog):
        record = _record(speed_limit=65.0)
        assert discretize(record, catalog)["speed_limit"] == ">25"
        with pytest.raises(OutOfRangeContinuous):
            discretize(record, catalog, strict_range=True)

    def test_slack_widens_range(self, catalog):
        discretize(_record(street_width=141.5), catalog, strict_range=True)

    def test_negative_count(self, catalog):
        with pytest.raises(NegativeCount):
            discretize(_record(parks=-1.0), catalog)

    def test_rule_validation(self):
        with pytest.raises(CatalogError):
            DiscretizationRule(kind="bins", cutpoints=(5.0, 1.0), labels=("a", "b", "c"))
        with pytest.raises(CatalogError):
            DiscretizationRule(kind="threshold", cutpoints=(1.0,), labels=("a",))

    def test_repeatable_and_leaves_record_untouched(self, partition, catalog):
        for record in partition.autonomous[:20]:
            before = dict(record.raw_fields)
            assert discretize(record, catalog) == discretize(record, catalog)
            assert record.raw_fields == before

    def test_independent_of_record_order(self, partition, catalog):
        records = partition.conventional
        forward = {r.crash_id: discretize(r, catalog) for r in records}
        backward = {r.crash_id: discretize(r, catalog) for r in reversed(records)}
        assert forward == backward


class TestCatalog:
    def test_reference_must_be_a_level(self):
        with pytest.raises(CatalogError):
            VariableCatalog.from_dict({"variables": [
                {"name": "x", "kind": "Categorical", "levels": ["a", "b"], "reference": "c"},
            ]})

    def test_flowrate_description(self, catalog):
        assert catalog.get("dvf").description.startswith("Daily visitors' flowrate")

    def test_linkage_entries_are_not_read_from_crashes(self, catalog):
        names = {entry.name for entry in catalog.crash_entries}
        assert "disengagement" not in names
        assert "injury" in names

    def test_expand_terms(self, catalog):
        assert expand_terms(["land_use[Commercial]"], catalog) == [("land_use[Commercial]", "land_use", "Commercial")]
        assert len(expand_terms(["land_use"], catalog)) == 3
        with pytest.raises(UndeclaredLevel):
            expand_terms(["land_use[Farm]"], catalog)
        with pytest.raises(DataError):
            expand_terms(["land_use[Residential]"], catalog)


class TestEncodeDesign:
    """Dummy coding per driving mode and model nesting."""

    def _spec(self, **changes):
        document = {"label": "m", "response": "injury",
                    "fixed_terms": ["time_of_day", "intersection", "speed_limit"]}
        document.update(changes)
        return HierarchicalModelSpec.from_dict(document)

    def test_vehicle_unit_grouping(self, partition, catalog):
        data = encode_design(partition.autonomous, self._spec(), catalog)
        assert data.n_rows == 96
        assert int(data.response.sum()) == 22
        assert data.column_names == ["time_of_day[Daytime]", "intersection[Yes]", "speed_limit[>25]"]
        assert all(" " in label for label in data.group_labels_l2)
        assert data.mode is DrivingMode.AUTONOMOUS

    def test_crash_type_grouping(self, partition, catalog):
        data = encode_design(partition.conventional, self._spec(nesting="TwoLevelCrashType"), catalog)
        assert data.group_labels_l2[0] == "Rear-end"
        assert data.n_groups == 6
        assert np.bincount(data.group_index_l2)[0] == 34

    def test_three_level_grouping(self, partition, catalog):
        data = encode_design(partition.autonomous, self._spec(nesting="ThreeLevel"), catalog)
        assert data.n_groups_l3 == 6
        assert data.group_index_l3 is not None

    def test_constant_column(self, partition, catalog):
        spec = self._spec(fixed_terms=["weather"])
        with pytest.raises(ConstantColumn):
            encode_design(partition.conventional, spec, catalog)

    def test_mixed_modes_rejected(self, partition, catalog):
        with pytest.raises(DataError):
            encode_design(partition.autonomous[:5] + partition.conventional[:5], self._spec(), catalog)

    def test_fingerprint_tracks_contents(self, partition, catalog):
        a = encode_design(partition.autonomous, self._spec(), catalog)
        b = encode_design(partition.autonomous, self._spec(fixed_terms=["time_of_day"]), catalog)
        assert a.fingerprint() != b.fingerprint()
        assert a.observation_fingerprint() == b.observation_fingerprint()

    def test_decode_row(self, partition, catalog):
        data = encode_design(partition.autonomous, self._spec(), catalog)
        decoded = data.decode_row(0)
        assert set(decoded) <= {"time_of_day", "intersection", "speed_limit"}

    def test_decoding_reproduces_non_reference_levels(self, partition, catalog):
        spec = self._spec(fixed_terms=["time_of_day", "light", "land_use", "speed_limit"])
        data = encode_design(partition.autonomous, spec, catalog)
        by_id = {r.crash_id: r for r in partition.autonomous}
        for row, crash_id in enumerate(data.row_ids):
            levels = discretize(by_id[crash_id], catalog)
            expected = {
                variable: levels[variable]
                for variable in ("time_of_day", "light", "land_use", "speed_limit")
                if levels[variable] != catalog.get(variable).reference
            }
            assert data.decode_row(row) == expected

    def test_one_column_per_non_reference_level(self, partition, catalog):
        data = encode_design(partition.autonomous, self._spec(fixed_terms=["land_use"]), catalog)
        assert len(data.column_names) == len(catalog.get("land_use").levels) - 1
        assert (data.fixed_design.sum(axis=1) <= 1).all()

    def test_record_order_does_not_change_rows(self, partition, catalog):
        forward = encode_design(partition.autonomous, self._spec(), catalog)
        backward = encode_design(list(reversed(partition.autonomous)), self._spec(), catalog)
        assert backward.column_names == forward.column_names
        assert backward.group_labels_l2 == forward.group_labels_l2
        rows = {crash_id: i for i, crash_id in enumerate(backward.row_ids)}
        order = [rows[crash_id] for crash_id in forward.row_ids]
        np.testing.assert_array_equal(backward.fixed_design[order], forward.fixed_design)
        np.testing.assert_array_equal(backward.response[order], forward.response)
        np.testing.assert_array_equal(backward.group_index_l2[order], forward.group_index_l2)
