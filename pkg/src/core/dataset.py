"""
Crash record ingestion, disengagement linkage, driving-mode classification,
discretization and dummy coding.

Records are read from delimited text with a header; the variable catalog is
a declarative YAML document so new variables need no code change.
"""

import bisect
import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

import config
from src.core.errors import (
    AmbiguousMatch,
    CatalogError,
    ConstantColumn,
    DataError,
    DuplicateCrashId,
    EmptyGroup,
    MalformedNumeric,
    MissingColumn,
    NegativeCount,
    NonBinaryResponse,
    OutOfRangeContinuous,
    UnclassifiableRecord,
    UndeclaredLevel,
    UnknownColumn,
)
from src.core.file_handler import FileValidator
from src.core.hasher import ArtifactHasher

logger = logging.getLogger(__name__)

RawValue = Union[float, str]

CAUSE_FLAGS = (
    "unwanted_other_participant",
    "unwanted_av_movement",
    "changing_lanes",
    "deceleration",
)

ENGAGED_THROUGHOUT = "engaged_throughout"
MANUAL_STATED = "manual_stated"
DISENGAGEMENT_MENTIONED = "disengagement_mentioned"
MODE_HINT_FLAGS = (ENGAGED_THROUGHOUT, MANUAL_STATED, DISENGAGEMENT_MENTIONED)

_TRUE_TOKENS = {"1", "true", "yes", "y", "t"}
_FALSE_TOKENS = {"0", "false", "no", "n", "f", ""}


class DrivingMode(str, Enum):
    AUTONOMOUS = "Autonomous"
    CONVENTIONAL = "Conventional"


class Initiator(str, Enum):
    SYSTEM = "System"
    TEST_DRIVER = "TestDriver"

    @classmethod
    def parse(cls, text: str) -> "Initiator":
        token = text.strip().replace(" ", "").lower()
        if token in ("system", "avsystem"):
            return cls.SYSTEM
        if token in ("testdriver", "driver"):
            return cls.TEST_DRIVER
        raise DataError(f"unknown disengagement initiator {text!r}")

    @property
    def catalog_level(self) -> str:
        levels = config.LINKAGE_VARIABLES["initiator"]
        return levels[1] if self is Initiator.SYSTEM else levels[2]


class VariableKind(str, Enum):
    CONTINUOUS = "Continuous"
    CATEGORICAL = "Categorical"


class Nesting(str, Enum):
    TWO_LEVEL_VEHICLE_UNIT = "TwoLevelVehicleUnit"
    TWO_LEVEL_CRASH_TYPE = "TwoLevelCrashType"
    THREE_LEVEL = "ThreeLevel"


@dataclass(frozen=True)
class CrashRecord:
    """
    One crash report row.

    Attributes:
        crash_id: Opaque identifier, unique within a dataset
        date: Calendar date of the crash
        manufacturer: Permit holder name
        vehicle_type: Vehicle model
        vehicle_year: Production year
        mode_hints: Subset of MODE_HINT_FLAGS stated in the report
        raw_fields: Catalog variable name -> raw value
        narrative_initiator: Initiator stated in the crash narrative, if any
        narrative_causes: Cause flags stated in the crash narrative
        disengagement_present: Set by link_disengagements
        initiator: Linked initiator, if a disengagement is present
        cause_flags: Linked cause flags
        ambiguous_match: More than one disengagement record matched
    """
    crash_id: str
    date: dt.date
    manufacturer: str
    vehicle_type: str
    vehicle_year: int
    mode_hints: FrozenSet[str] = frozenset()
    raw_fields: Dict[str, RawValue] = field(default_factory=dict, hash=False)
    narrative_initiator: Optional[Initiator] = None
    narrative_causes: FrozenSet[str] = frozenset()
    disengagement_present: bool = False
    initiator: Optional[Initiator] = None
    cause_flags: FrozenSet[str] = frozenset()
    ambiguous_match: bool = False

    @property
    def link_key(self) -> Tuple[dt.date, str, str]:
        return (self.date, self.manufacturer, self.vehicle_type)

    @property
    def vehicle_unit(self) -> Tuple[str, int]:
        return (self.manufacturer, self.vehicle_year)


@dataclass(frozen=True)
class DisengagementRecord:
    """One disengagement report row; exactly one initiator."""
    date: dt.date
    manufacturer: str
    vehicle_type: str
    initiator: Initiator
    cause_flags: FrozenSet[str] = frozenset()

    @property
    def link_key(self) -> Tuple[dt.date, str, str]:
        return (self.date, self.manufacturer, self.vehicle_type)


@dataclass(frozen=True)
class DiscretizationRule:
    """
    Maps a numeric value onto one level label.

    kind 'threshold': one cutpoint and a strict comparator; labels are
    (label when the comparison holds, label otherwise), so the boundary
    always lands on the second label.
    kind 'bins': ascending cutpoints, left-closed intervals, one label per
    interval (len(labels) == len(cutpoints) + 1).
    """
    kind: str
    cutpoints: Tuple[float, ...]
    labels: Tuple[str, ...]
    comparator: str = ">"

    def __post_init__(self):
        if self.kind == "threshold":
            if len(self.cutpoints) != 1 or len(self.labels) != 2:
                raise CatalogError("threshold rule needs one cutpoint and two labels")
            if self.comparator not in (">", "<"):
                raise CatalogError(f"threshold comparator must be '>' or '<', got {self.comparator!r}")
        elif self.kind == "bins":
            if len(self.labels) != len(self.cutpoints) + 1:
                raise CatalogError("bins rule needs one more label than cutpoints")
            if list(self.cutpoints) != sorted(self.cutpoints):
                raise CatalogError("bins cutpoints must be ascending")
        else:
            raise CatalogError(f"unknown discretization rule {self.kind!r}")

    def apply(self, value: float) -> str:
        if self.kind == "threshold":
            cut = self.cutpoints[0]
            holds = value > cut if self.comparator == ">" else value < cut
            return self.labels[0] if holds else self.labels[1]
        return self.labels[bisect.bisect_right(self.cutpoints, value)]

    @classmethod
    def from_dict(cls, document: Dict) -> "DiscretizationRule":
        kind = document.get("type", "threshold")
        if kind == "threshold":
            cutpoints = (float(document["cutpoint"]),)
        else:
            cutpoints = tuple(float(c) for c in document["cutpoints"])
        return cls(
            kind=kind,
            cutpoints=cutpoints,
            labels=tuple(document["labels"]),
            comparator=document.get("comparator", ">"),
        )


@dataclass(frozen=True)
class CatalogEntry:
    """One variable of the catalog."""
    name: str
    kind: VariableKind
    levels: Tuple[str, ...]
    reference: str
    rule: Optional[DiscretizationRule] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    slack: float = 0.0
    count: bool = False
    source: str = "crash"
    description: str = ""

    @property
    def non_reference_levels(self) -> Tuple[str, ...]:
        return tuple(level for level in self.levels if level != self.reference)

    def column_name(self, level: str) -> str:
        return f"{self.name}[{level}]"


class VariableCatalog:
    """Ordered collection of catalog entries keyed by name."""

    def __init__(self, entries: Sequence[CatalogEntry]):
        self.entries = tuple(entries)
        self._by_name = {entry.name: entry for entry in self.entries}
        if len(self._by_name) != len(self.entries):
            raise CatalogError("duplicate variable names in catalog")
        self.validate()

    def validate(self) -> None:
        for entry in self.entries:
            if entry.kind is VariableKind.CONTINUOUS and entry.rule is None:
                raise CatalogError(f"continuous variable '{entry.name}' has no discretization rule")
            if len(entry.levels) < 2:
                raise CatalogError(f"variable '{entry.name}' needs at least two levels")
            if len(set(entry.levels)) != len(entry.levels):
                raise CatalogError(f"variable '{entry.name}' repeats a level")
            if entry.reference not in entry.levels:
                raise CatalogError(
                    f"reference level {entry.reference!r} of '{entry.name}' is not one of its levels"
                )

    def __iter__(self):
        return iter(self.entries)

    def get(self, name: str) -> CatalogEntry:
        try:
            return self._by_name[name]
        except KeyError:
            raise CatalogError(f"variable '{name}' is not in the catalog") from None

    @property
    def names(self) -> List[str]:
        return [entry.name for entry in self.entries]

    @property
    def crash_entries(self) -> List[CatalogEntry]:
        """Entries read from the crash table (not derived by linkage)."""
        return [entry for entry in self.entries if entry.source == "crash"]

    def reference_levels(self) -> Dict[str, str]:
        return {entry.name: entry.reference for entry in self.entries}

    @classmethod
    def from_dict(cls, document: Dict) -> "VariableCatalog":
        entries = []
        for item in document.get("variables", []):
            kind = VariableKind(item["kind"])
            rule = None
            if kind is VariableKind.CONTINUOUS:
                if "rule" not in item:
                    raise CatalogError(f"continuous variable '{item['name']}' has no rule")
                rule = DiscretizationRule.from_dict(item["rule"])
                levels = rule.labels
            else:
                levels = tuple(str(level) for level in item["levels"])
            bounds = item.get("range") or (None, None)
            entries.append(CatalogEntry(
                name=item["name"],
                kind=kind,
                levels=tuple(levels),
                reference=str(item["reference"]),
                rule=rule,
                minimum=None if bounds[0] is None else float(bounds[0]),
                maximum=None if bounds[1] is None else float(bounds[1]),
                slack=float(item.get("slack", 0.0)),
                count=bool(item.get("count", False)),
                source=item.get("source", "crash"),
                description=item.get("description", ""),
            ))
        return cls(entries)

    @classmethod
    def from_yaml(cls, path) -> "VariableCatalog":
        FileValidator.validate_input_path(path, "catalog")
        with open(path, "r", encoding=config.CSV_ENCODING) as handle:
            return cls.from_dict(yaml.safe_load(handle) or {})


@dataclass
class CodedDataset:
    """
    Dummy-coded level-1 rows with their group structure.

    fixed_design holds X (n x P), level2_design holds Z row-wise (n x Q,
    constant within each level-2 group). Reference levels are the implicit
    all-zero row.
    """
    response: np.ndarray
    fixed_design: np.ndarray
    level2_design: np.ndarray
    group_index_l2: np.ndarray
    column_names: List[str]
    level2_names: List[str]
    group_labels_l2: List[str]
    response_name: str = "y"
    mode: Optional[DrivingMode] = None
    group_index_l3: Optional[np.ndarray] = None
    group_labels_l3: Optional[List[str]] = None
    reference_levels: Dict[str, str] = field(default_factory=dict)
    row_ids: List[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return int(self.response.shape[0])

    @property
    def n_fixed(self) -> int:
        return int(self.fixed_design.shape[1])

    @property
    def n_level2(self) -> int:
        return int(self.level2_design.shape[1])

    @property
    def n_groups(self) -> int:
        return len(self.group_labels_l2)

    @property
    def n_groups_l3(self) -> int:
        return 0 if self.group_labels_l3 is None else len(self.group_labels_l3)

    def validate(self, allow_empty: bool = False) -> "CodedDataset":
        n = self.n_rows
        if n == 0 and not allow_empty:
            raise DataError("coded dataset has no rows")
        if not np.isin(self.response, (0, 1)).all():
            raise NonBinaryResponse(f"response '{self.response_name}' has values outside {{0, 1}}")
        if self.fixed_design.shape != (n, len(self.column_names)):
            raise DataError("fixed design shape does not match its column names")
        if self.level2_design.shape != (n, len(self.level2_names)):
            raise DataError("level-2 design shape does not match its column names")
        _check_dense(self.group_index_l2, self.n_groups, "level-2")
        if self.group_index_l3 is not None:
            _check_dense(self.group_index_l3, self.n_groups_l3, "level-3")
        for variable, columns in _columns_by_variable(self.column_names).items():
            if (self.fixed_design[:, columns].sum(axis=1) > 1).any():
                raise DataError(f"dummy columns of '{variable}' overlap in some row")
        return self

    def fingerprint(self) -> str:
        """Digest of response, designs and group indices."""
        return ArtifactHasher().hash_arrays([
            self.response.astype(np.int64),
            self.fixed_design.astype(np.float64),
            self.level2_design.astype(np.float64),
            self.group_index_l2.astype(np.int64),
            None if self.group_index_l3 is None else self.group_index_l3.astype(np.int64),
        ])

    def observation_fingerprint(self) -> str:
        """Digest of row ids, response name and response; equal for any model fit to the same rows."""
        hasher = ArtifactHasher()
        ids = "\n".join(self.row_ids or [str(i) for i in range(self.n_rows)])
        return hasher.digest_bytes([
            self.response_name.encode(config.CSV_ENCODING),
            ids.encode(config.CSV_ENCODING),
            hasher.hash_arrays([self.response.astype(np.int64)]).encode("ascii"),
        ])

    def decode_row(self, row: int) -> Dict[str, str]:
        """Return variable -> non-reference level for the dummies set in one row."""
        decoded = {}
        for col, name in enumerate(self.column_names):
            if self.fixed_design[row, col] != 0:
                variable, level = split_column_name(name)
                decoded[variable] = level
        return decoded


@dataclass
class ModePartition:
    """Records split by driving mode plus exclusions with their reasons."""
    autonomous: List[CrashRecord] = field(default_factory=list)
    conventional: List[CrashRecord] = field(default_factory=list)
    excluded: List[Tuple[str, str]] = field(default_factory=list)

    def records(self, mode: DrivingMode) -> List[CrashRecord]:
        return self.autonomous if mode is DrivingMode.AUTONOMOUS else self.conventional

    def counts(self) -> Dict[str, int]:
        return {
            DrivingMode.AUTONOMOUS.value: len(self.autonomous),
            DrivingMode.CONVENTIONAL.value: len(self.conventional),
            "Excluded": len(self.excluded),
        }


def split_column_name(name: str) -> Tuple[str, str]:
    """Split 'variable[level]' into its parts."""
    if not name.endswith("]") or "[" not in name:
        raise DataError(f"column name {name!r} is not of the form variable[level]")
    variable, level = name[:-1].split("[", 1)
    return variable, level


def _columns_by_variable(column_names: Sequence[str]) -> Dict[str, List[int]]:
    grouped: Dict[str, List[int]] = {}
    for col, name in enumerate(column_names):
        variable, _ = split_column_name(name)
        grouped.setdefault(variable, []).append(col)
    return grouped


def _check_dense(index: np.ndarray, n_groups: int, label: str) -> None:
    if index.size == 0:
        return
    if n_groups < 2:
        raise EmptyGroup(f"{label} grouping has {n_groups} group(s); at least 2 are required")
    counts = np.bincount(index, minlength=n_groups)
    if index.min() < 0 or counts.shape[0] != n_groups:
        raise DataError(f"{label} group index is not within [0, {n_groups})")
    if (counts == 0).any():
        raise EmptyGroup(f"{label} group(s) without rows: {np.flatnonzero(counts == 0).tolist()}")


def _parse_flag(text: str, row: int, column: str) -> bool:
    token = text.strip().lower()
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    raise MalformedNumeric(row, column, text)


def _parse_date(text: str, row: int, column: str) -> dt.date:
    try:
        return dt.datetime.strptime(text.strip(), config.DATE_FORMAT).date()
    except ValueError:
        raise DataError(f"row {row}, column '{column}': cannot parse {text!r} as a date") from None


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise MalformedNumeric(row, column, text) from None
    if not np.isfinite(value):
        raise MalformedNumeric(row, column, text)
    return value


def _parse_causes(text: str, row: int) -> FrozenSet[str]:
    causes = frozenset(token.strip() for token in text.split(";") if token.strip())
    unknown = causes - set(CAUSE_FLAGS)
    if unknown:
        raise DataError(f"row {row}: unknown cause flag(s) {sorted(unknown)}")
    return causes


def _read_table(path, kind: str, columns: Sequence[str] = ()) -> pd.DataFrame:
    """
    Read a CSV input as strings.

    A 0-byte file reads as an empty table with the given columns.

    Raises:
        DataError: the file is not UTF-8 or not parseable as CSV
    """
    FileValidator.validate_input_path(path, kind)
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding=config.CSV_ENCODING)
    except pd.errors.EmptyDataError:
        logger.warning("%s file %s is empty", kind, path)
        return pd.DataFrame(columns=list(columns), dtype=str)
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid {config.CSV_ENCODING} ({exc.reason} at byte {exc.start})") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV: {exc}") from None


def load_records(path, schema: VariableCatalog) -> List[CrashRecord]:
    """
    Read crash records from a CSV file.

    Categorical cells outside the declared levels become "Unknown"; continuous
    cells must parse as numbers.

    Raises:
        MissingColumn: a required metadata or catalog column is absent
        UnknownColumn: a header is neither metadata nor a catalog variable
        MalformedNumeric: a continuous or integer cell does not parse
        DuplicateCrashId: a crash id repeats
    """
    frame = _read_table(path, "crashes",
                        list(config.REQUIRED_CRASH_COLUMNS) + [e.name for e in schema.crash_entries])
    header = list(frame.columns)
    missing = [c for c in config.REQUIRED_CRASH_COLUMNS if c not in header]
    missing += [e.name for e in schema.crash_entries if e.name not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    allowed = set(config.CRASH_METADATA_COLUMNS) | set(schema.names)
    unknown = [c for c in header if c not in allowed]
    if unknown:
        raise UnknownColumn(f"{path}: column(s) {unknown} are not in the catalog")

    records = []
    seen = set()
    for offset, row in enumerate(frame.to_dict(orient="records")):
        row_no = offset + 1
        crash_id = row["crash_id"].strip()
        if crash_id in seen:
            raise DuplicateCrashId(f"crash id {crash_id!r} appears more than once")
        seen.add(crash_id)

        year_text = row["vehicle_year"]
        try:
            vehicle_year = int(year_text)
        except ValueError:
            raise MalformedNumeric(row_no, "vehicle_year", year_text) from None

        hints = frozenset(
            flag for flag in MODE_HINT_FLAGS if _parse_flag(row[flag], row_no, flag)
        )
        initiator_text = row.get("narrative_initiator", "").strip()
        narrative_initiator = Initiator.parse(initiator_text) if initiator_text else None
        narrative_causes = _parse_causes(row.get("narrative_causes", ""), row_no)

        raw_fields: Dict[str, RawValue] = {}
        for entry in schema.crash_entries:
            cell = row[entry.name]
            if entry.kind is VariableKind.CONTINUOUS:
                raw_fields[entry.name] = _parse_float(cell, row_no, entry.name)
            else:
                value = cell.strip()
                if value not in entry.levels:
                    logger.debug("row %d: %s=%r read as %s", row_no, entry.name, value, config.UNKNOWN_LEVEL)
                    value = config.UNKNOWN_LEVEL
                raw_fields[entry.name] = value

        records.append(CrashRecord(
            crash_id=crash_id,
            date=_parse_date(row["date"], row_no, "date"),
            manufacturer=row["manufacturer"].strip(),
            vehicle_type=row["vehicle_type"].strip(),
            vehicle_year=vehicle_year,
            mode_hints=hints,
            raw_fields=raw_fields,
            narrative_initiator=narrative_initiator,
            narrative_causes=narrative_causes,
        ))
    logger.info("loaded %d crash record(s) from %s", len(records), path)
    return records


def load_disengagements(path) -> List[DisengagementRecord]:
    """Read disengagement reports from a CSV file."""
    frame = _read_table(path, "disengagements", config.DISENGAGEMENT_COLUMNS)
    missing = [c for c in config.DISENGAGEMENT_COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    records = []
    for offset, row in enumerate(frame.to_dict(orient="records")):
        row_no = offset + 1
        causes = frozenset(flag for flag in CAUSE_FLAGS if _parse_flag(row[flag], row_no, flag))
        records.append(DisengagementRecord(
            date=_parse_date(row["date"], row_no, "date"),
            manufacturer=row["manufacturer"].strip(),
            vehicle_type=row["vehicle_type"].strip(),
            initiator=Initiator.parse(row["initiator"]),
            cause_flags=causes,
        ))
    logger.info("loaded %d disengagement record(s) from %s", len(records), path)
    return records


def _linkage_fields(present: bool, initiator: Optional[Initiator], causes: FrozenSet[str]) -> Dict[str, str]:
    fields = {}
    for name, levels in config.LINKAGE_VARIABLES.items():
        if name == "disengagement":
            fields[name] = levels[1] if present else levels[0]
        elif name == "initiator":
            fields[name] = initiator.catalog_level if present and initiator else levels[0]
        else:
            fields[name] = levels[1] if name in causes else levels[0]
    return fields


def link_disengagements(
    crashes: Sequence[CrashRecord],
    diseng: Sequence[DisengagementRecord],
    strict: bool = False,
) -> List[CrashRecord]:
    """
    Mark crashes with a disengagement and copy initiator and causes.

    A crash matches a disengagement record on the exact (date, manufacturer,
    vehicle_type) triple. Crashes whose narrative mentions a disengagement
    are marked present even without a match, taking initiator and causes
    from the narrative. When several records match, the first in stable
    key order is used and the crash is flagged ambiguous.

    Raises:
        AmbiguousMatch: only when strict is set and a crash matches >1 record
    """
    index: Dict[Tuple[dt.date, str, str], List[DisengagementRecord]] = {}
    for record in sorted(diseng, key=lambda r: r.link_key):
        index.setdefault(record.link_key, []).append(record)

    linked = []
    for crash in crashes:
        matches = index.get(crash.link_key, [])
        ambiguous = len(matches) > 1
        if ambiguous:
            message = (
                f"crash {crash.crash_id}: {len(matches)} disengagement records match "
                f"{crash.date}/{crash.manufacturer}/{crash.vehicle_type}; first taken"
            )
            if strict:
                raise AmbiguousMatch(message)
            logger.warning(message)

        if matches:
            present, initiator, causes = True, matches[0].initiator, matches[0].cause_flags
        elif DISENGAGEMENT_MENTIONED in crash.mode_hints:
            present, causes = True, crash.narrative_causes
            initiator = crash.narrative_initiator
            if initiator is None:
                logger.warning("crash %s: narrative disengagement without initiator; test driver assumed",
                               crash.crash_id)
                initiator = Initiator.TEST_DRIVER
        else:
            present, initiator, causes = False, None, frozenset()

        raw_fields = dict(crash.raw_fields)
        raw_fields.update(_linkage_fields(present, initiator, causes))
        linked.append(replace(
            crash,
            raw_fields=raw_fields,
            disengagement_present=present,
            initiator=initiator,
            cause_flags=causes,
            ambiguous_match=ambiguous,
        ))
    return linked


def classify_mode(record: CrashRecord) -> DrivingMode:
    """
    Classify one linked crash.

    Autonomous when the system stayed engaged or a disengagement is present;
    conventional when manual driving is stated and no disengagement exists.

    Raises:
        UnclassifiableRecord: neither rule applies
    """
    if ENGAGED_THROUGHOUT in record.mode_hints or record.disengagement_present:
        return DrivingMode.AUTONOMOUS
    if MANUAL_STATED in record.mode_hints:
        return DrivingMode.CONVENTIONAL
    raise UnclassifiableRecord(
        f"crash {record.crash_id}: not engaged throughout, no disengagement, manual driving not stated"
    )


def partition_by_mode(records: Sequence[CrashRecord]) -> ModePartition:
    """Classify every record; unclassifiable ones are excluded with a logged reason."""
    partition = ModePartition()
    for record in records:
        try:
            mode = classify_mode(record)
        except UnclassifiableRecord as exc:
            logger.warning("excluded: %s", exc)
            partition.excluded.append((record.crash_id, str(exc)))
            continue
        partition.records(mode).append(record)
    return partition


def discretize(
    record: CrashRecord,
    catalog: VariableCatalog,
    strict_range: bool = False,
) -> Dict[str, str]:
    """
    Map every catalog variable present on the record to a level label.

    Continuous values go through the catalog rule; categorical values pass
    through unchanged.

    Raises:
        NegativeCount: a count variable is negative
        OutOfRangeContinuous: only with strict_range; otherwise logged
    """
    coded = {}
    for entry in catalog:
        if entry.name not in record.raw_fields:
            continue
        value = record.raw_fields[entry.name]
        if entry.kind is VariableKind.CATEGORICAL:
            coded[entry.name] = str(value)
            continue
        value = float(value)
        if entry.count and value < 0:
            raise NegativeCount(f"crash {record.crash_id}: {entry.name}={value:g} is negative")
        low = -np.inf if entry.minimum is None else entry.minimum - entry.slack
        high = np.inf if entry.maximum is None else entry.maximum + entry.slack
        if not low <= value <= high:
            message = f"crash {record.crash_id}: {entry.name}={value:g} outside [{low:g}, {high:g}]"
            if strict_range:
                raise OutOfRangeContinuous(message)
            logger.warning(message)
        coded[entry.name] = entry.rule.apply(value)
    return coded


def expand_terms(terms: Sequence[str], catalog: VariableCatalog) -> List[Tuple[str, str, str]]:
    """
    Expand model terms into (column_name, variable, level) dummies.

    A bare variable name yields all its non-reference levels; 'var[level]'
    yields that single dummy.
    """
    columns = []
    for term in terms:
        if term.endswith("]") and "[" in term:
            variable, level = split_column_name(term)
            entry = catalog.get(variable)
            if level not in entry.levels:
                raise UndeclaredLevel(f"term {term!r}: level {level!r} is not declared for '{variable}'")
            if level == entry.reference:
                raise DataError(f"term {term!r} names the reference level")
            columns.append((term, variable, level))
        else:
            entry = catalog.get(term)
            columns.extend((entry.column_name(level), entry.name, level) for level in entry.non_reference_levels)
    names = [c[0] for c in columns]
    if len(set(names)) != len(names):
        raise DataError("model terms produce duplicate columns")
    return columns


def _dummy_matrix(coded: Sequence[Dict[str, str]], columns, catalog: VariableCatalog, ids) -> np.ndarray:
    matrix = np.zeros((len(coded), len(columns)), dtype=np.float64)
    for col, (name, variable, level) in enumerate(columns):
        entry = catalog.get(variable)
        for row, values in enumerate(coded):
            if variable not in values:
                raise MissingColumn(f"crash {ids[row]}: no value for '{variable}'")
            if values[variable] not in entry.levels:
                raise UndeclaredLevel(
                    f"crash {ids[row]}: level {values[variable]!r} of '{variable}' is not declared in the catalog"
                )
            matrix[row, col] = values[variable] == level
    return matrix


def _dense_index(keys: Sequence, order: Optional[Sequence] = None) -> Tuple[np.ndarray, List]:
    labels = list(order) if order is not None else sorted(set(keys))
    position = {key: j for j, key in enumerate(labels)}
    return np.array([position[key] for key in keys], dtype=np.int64), labels


def _vehicle_unit_groups(records: Sequence[CrashRecord]) -> Tuple[np.ndarray, List[str]]:
    index, keys = _dense_index([r.vehicle_unit for r in records])
    return index, [f"{manufacturer} {year}" for manufacturer, year in keys]


def _crash_type_groups(coded: Sequence[Dict[str, str]], ids) -> Tuple[np.ndarray, List[str]]:
    variable = config.CRASH_TYPE_VARIABLE
    keys = []
    for row, values in enumerate(coded):
        if values.get(variable) not in config.CRASH_TYPE_GROUPS:
            raise DataError(f"crash {ids[row]}: '{variable}' is not one of {list(config.CRASH_TYPE_GROUPS)}")
        keys.append(values[variable])
    index, labels = _dense_index(keys, config.CRASH_TYPE_GROUPS)
    counts = np.bincount(index, minlength=len(labels))
    if (counts == 0).any():
        empty = [labels[j] for j in np.flatnonzero(counts == 0)]
        raise EmptyGroup(f"crash-type group(s) {empty} have no rows")
    return index, labels


def encode_design(records: Sequence[CrashRecord], spec, catalog: VariableCatalog) -> CodedDataset:
    """
    Dummy-code one driving mode's records for a model spec.

    Raises:
        DataError: records span several modes or are empty
        EmptyGroup: a level-2 (or level-3) group has no rows
        ConstantColumn: a design column is constant over all rows
    """
    if not records:
        raise DataError("no records to encode")
    modes = {classify_mode(r) for r in records}
    if len(modes) != 1:
        raise DataError(f"records span several driving modes: {sorted(m.value for m in modes)}")
    ids = [r.crash_id for r in records]
    coded = [discretize(r, catalog) for r in records]

    response_entry = catalog.get(spec.response_name)
    if len(response_entry.levels) != 2:
        raise NonBinaryResponse(f"response '{spec.response_name}' has {len(response_entry.levels)} levels")
    (event_level,) = response_entry.non_reference_levels
    response = np.array([values[spec.response_name] == event_level for values in coded], dtype=np.int64)

    fixed_columns = expand_terms(spec.fixed_terms, catalog)
    level2_columns = expand_terms(spec.level2_terms, catalog)
    X = _dummy_matrix(coded, fixed_columns, catalog, ids)
    Z = _dummy_matrix(coded, level2_columns, catalog, ids)
    for matrix, columns in ((X, fixed_columns), (Z, level2_columns)):
        for col, (name, _, _) in enumerate(columns):
            if np.all(matrix[:, col] == matrix[0, col]):
                raise ConstantColumn(f"column '{name}' is constant ({matrix[0, col]:g}) across all rows")

    index_l3, labels_l3 = None, None
    if spec.nesting is Nesting.TWO_LEVEL_CRASH_TYPE:
        index_l2, labels_l2 = _crash_type_groups(coded, ids)
    else:
        index_l2, labels_l2 = _vehicle_unit_groups(records)
        if spec.nesting is Nesting.THREE_LEVEL:
            index_l3, labels_l3 = _crash_type_groups(coded, ids)

    for col, (name, _, _) in enumerate(level2_columns):
        for j in range(len(labels_l2)):
            if np.unique(Z[index_l2 == j, col]).size > 1:
                raise DataError(f"level-2 covariate '{name}' varies within group '{labels_l2[j]}'")

    variables = {variable for _, variable, _ in fixed_columns + level2_columns}
    dataset = CodedDataset(
        response=response,
        fixed_design=X,
        level2_design=Z,
        group_index_l2=index_l2,
        column_names=[c[0] for c in fixed_columns],
        level2_names=[c[0] for c in level2_columns],
        group_labels_l2=labels_l2,
        response_name=spec.response_name,
        mode=modes.pop(),
        group_index_l3=index_l3,
        group_labels_l3=labels_l3,
        reference_levels={v: catalog.get(v).reference for v in sorted(variables | {spec.response_name})},
        row_ids=ids,
    )
    return dataset.validate()


def tabulate_levels(partition: ModePartition, catalog: VariableCatalog) -> pd.DataFrame:
    """
    Count records per variable level and driving mode.

    Returns:
        DataFrame with Variable, Level, Reference and Num/Percent per mode
    """
    rows = []
    coded = {
        mode: [discretize(r, catalog) for r in partition.records(mode)]
        for mode in DrivingMode
    }
    for entry in catalog:
        levels = list(entry.levels)
        if any(values.get(entry.name) == config.UNKNOWN_LEVEL
               for mode_values in coded.values() for values in mode_values) and config.UNKNOWN_LEVEL not in levels:
            levels.append(config.UNKNOWN_LEVEL)
        for level in levels:
            row = {"Variable": entry.name, "Level": level, "Reference": level == entry.reference}
            for mode in DrivingMode:
                values = coded[mode]
                num = sum(1 for v in values if v.get(entry.name) == level)
                row[f"{mode.value} Num"] = num
                row[f"{mode.value} Percent"] = 100.0 * num / len(values) if values else 0.0
            rows.append(row)
    return pd.DataFrame(rows)


def describe_continuous(records: Sequence[CrashRecord], catalog: VariableCatalog) -> pd.DataFrame:
    """Mean, sample S.D., min and max of each continuous variable."""
    rows = []
    for entry in catalog:
        if entry.kind is not VariableKind.CONTINUOUS:
            continue
        values = np.array([r.raw_fields[entry.name] for r in records if entry.name in r.raw_fields], dtype=float)
        rows.append({
            "Variable": entry.name,
            "Description": entry.description,
            "Mean": values.mean() if values.size else np.nan,
            "S.D.": values.std(ddof=1) if values.size > 1 else np.nan,
            "Min": values.min() if values.size else np.nan,
            "Max": values.max() if values.size else np.nan,
        })
    return pd.DataFrame(rows, columns=["Variable", "Description", "Mean", "S.D.", "Min", "Max"])
