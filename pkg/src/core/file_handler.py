"""
File handling and validation utilities.

Handles input path checks, YAML documents, artifact headers and the columnar
CSV + sidecar metadata form of coded datasets.
"""

import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

import config
from src.core.errors import DataError, UsageError
from src.core.hasher import ArtifactHasher

HEADER_PREFIX = "# "


@dataclass
class ArtifactHeader:
    """
    Provenance block written at the top of every artifact.

    Attributes:
        kind: Artifact kind (e.g. 'trace', 'summary')
        version: Toolkit version
        config_hash: Digest of the run config
        seed: Master seed
        extra: Further key/value lines (model label, mode, fingerprint)
    """
    kind: str
    version: str
    config_hash: str
    seed: int
    extra: Optional[Dict[str, str]] = None

    def lines(self) -> List[str]:
        lines = [
            f"{HEADER_PREFIX}{config.TOOLKIT_NAME} {self.kind}",
            f"{HEADER_PREFIX}version: {self.version}",
            f"{HEADER_PREFIX}config_hash: {self.config_hash}",
            f"{HEADER_PREFIX}seed: {self.seed}",
        ]
        for key in sorted(self.extra or {}):
            lines.append(f"{HEADER_PREFIX}{key}: {self.extra[key]}")
        return lines

    def render(self) -> str:
        return "\n".join(self.lines()) + "\n"


class FileValidator:
    """Validates input and output locations."""

    @staticmethod
    def validate_input_path(path, kind: str = "input") -> Path:
        """
        Check that an input file exists.

        Raises:
            UsageError: path is unset or does not name a file
        """
        if path is None or str(path) == "":
            raise UsageError(f"no {kind} path given")
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"{kind} file not found: {path}")
        return path

    @staticmethod
    def validate_output_dir(path) -> Path:
        """
        Create the output directory if needed and check it is writable.

        Raises:
            UsageError: the directory cannot be created or written
        """
        path = Path(path)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {path}: {exc}") from None
        if not os.access(path, os.W_OK):
            raise UsageError(f"output directory is not writable: {path}")
        return path


def read_yaml(path, kind: str = "config") -> Dict:
    """Load a YAML document; an empty file yields an empty dict."""
    path = FileValidator.validate_input_path(path, kind)
    with open(path, "r", encoding=config.CSV_ENCODING) as handle:
        try:
            document = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise UsageError(f"{kind} file {path} is not valid YAML: {exc}") from None
    return document or {}


def write_text(path, header: Optional[ArtifactHeader], body: str) -> Path:
    """Write a UTF-8 text artifact with '\\n' newlines, header block first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding=config.CSV_ENCODING, newline="\n") as handle:
        if header is not None:
            handle.write(header.render())
        handle.write(body)
    return path


def write_frame(path, header: Optional[ArtifactHeader], frame: pd.DataFrame) -> Path:
    """Write a DataFrame as RFC-4180 CSV below the header block."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=config.CSV_FLOAT_FORMAT, lineterminator="\n")
    return write_text(path, header, buffer.getvalue())


def write_yaml(path, header: Optional[ArtifactHeader], document: Dict) -> Path:
    return write_text(path, header, yaml.safe_dump(document, sort_keys=True, allow_unicode=True))


def read_frame(path, kind: str = "artifact") -> pd.DataFrame:
    """Read a CSV artifact, skipping its header block."""
    path = FileValidator.validate_input_path(path, kind)
    return pd.read_csv(path, comment="#", encoding=config.CSV_ENCODING)


def read_artifact_yaml(path, kind: str = "artifact") -> Dict:
    """YAML artifacts keep their header as comments, so plain loading works."""
    return read_yaml(path, kind)


def metadata_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.yaml")


def save_coded_dataset(dataset, csv_path, header: Optional[ArtifactHeader] = None) -> Path:
    """
    Write a coded dataset as a columnar CSV plus a sidecar metadata file.

    The CSV holds row_id, response, group ids and one column per design
    column; the sidecar names columns, reference levels and group maps.
    """
    columns = {
        "row_id": dataset.row_ids or [str(i) for i in range(dataset.n_rows)],
        dataset.response_name: dataset.response.astype(int),
        "group_l2": dataset.group_index_l2.astype(int),
    }
    if dataset.group_index_l3 is not None:
        columns["group_l3"] = dataset.group_index_l3.astype(int)
    for col, name in enumerate(dataset.column_names):
        columns[name] = dataset.fixed_design[:, col].astype(int)
    for col, name in enumerate(dataset.level2_names):
        columns[f"L2:{name}"] = dataset.level2_design[:, col].astype(int)
    frame = pd.DataFrame(columns)
    write_frame(csv_path, header, frame)

    metadata = {
        "response_name": dataset.response_name,
        "mode": None if dataset.mode is None else dataset.mode.value,
        "column_names": list(dataset.column_names),
        "level2_names": list(dataset.level2_names),
        "group_labels_l2": list(dataset.group_labels_l2),
        "group_labels_l3": None if dataset.group_labels_l3 is None else list(dataset.group_labels_l3),
        "reference_levels": dict(dataset.reference_levels),
        "fingerprint": dataset.fingerprint(),
    }
    write_yaml(metadata_path(csv_path), header, metadata)
    return Path(csv_path)


def load_coded_dataset(csv_path):
    """Read a dataset written by save_coded_dataset and verify its fingerprint."""
    from src.core.dataset import CodedDataset, DrivingMode

    frame = read_frame(csv_path, "coded dataset")
    metadata = read_yaml(metadata_path(csv_path), "dataset metadata")
    n = len(frame)
    column_names = metadata["column_names"]
    level2_names = metadata["level2_names"]
    labels_l3 = metadata.get("group_labels_l3")
    dataset = CodedDataset(
        response=frame[metadata["response_name"]].to_numpy(dtype=np.int64),
        fixed_design=frame[column_names].to_numpy(dtype=np.float64).reshape(n, len(column_names)),
        level2_design=frame[[f"L2:{name}" for name in level2_names]].to_numpy(dtype=np.float64)
        .reshape(n, len(level2_names)),
        group_index_l2=frame["group_l2"].to_numpy(dtype=np.int64),
        column_names=list(column_names),
        level2_names=list(level2_names),
        group_labels_l2=list(metadata["group_labels_l2"]),
        response_name=metadata["response_name"],
        mode=None if metadata.get("mode") is None else DrivingMode(metadata["mode"]),
        group_index_l3=frame["group_l3"].to_numpy(dtype=np.int64) if labels_l3 is not None else None,
        group_labels_l3=None if labels_l3 is None else list(labels_l3),
        reference_levels=dict(metadata.get("reference_levels") or {}),
        row_ids=[str(v) for v in frame["row_id"]],
    ).validate()
    expected = metadata.get("fingerprint")
    if expected and not ArtifactHasher.verify_fingerprint(dataset.fingerprint(), expected):
        raise DataError(f"{csv_path}: contents do not match the recorded fingerprint")
    return dataset
