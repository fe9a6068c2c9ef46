"""
Tests for formatting, exporting, hashing and artifact files

Tests:
1. Table cell formatting
2. Text reports
3. Digests and fingerprints
4. Artifact headers and coded dataset files
"""

import numpy as np
import pandas as pd
import pytest

from src.core.errors import DataError, UsageError
from src.core.evaluation import LooResult, ModelFit, WaicResult, build_fit_report, compare_models
from src.core.file_handler import (
    ArtifactHeader,
    FileValidator,
    load_coded_dataset,
    read_frame,
    read_yaml,
    save_coded_dataset,
    write_frame,
)
from src.core.hasher import ArtifactHasher, short_digest
from src.core.sampler import PosteriorDraws
from src.core.screening import screen
from src.utils.exporters import ReportExporter
from src.utils.formatters import (
    format_effect,
    format_estimate,
    format_number,
    format_odds_ratio,
    format_vif,
    pluralize,
)
from tests.conftest import random_dataset


class TestFormatters:
    """Display formatting."""

    def test_typographic_minus(self):
        assert format_number(-0.234) == "−0.23"
        assert format_number(-0.001) == "0.00"
        assert format_number(float("nan")) == "NA"
        assert format_number(float("-inf")) == "−inf"

    def test_estimate_and_odds_ratio_cells(self):
        assert format_estimate(-0.23, 0.08) == "−0.23 (0.08)"
        assert format_odds_ratio(0.7945, 0.66, 0.96) == "0.79 (0.66~0.96)"

    @pytest.mark.parametrize("percent, expected", [(57.0000001, "+57%"), (-64.0, "−64%"), (0.2, "0%")])
    def test_effect(self, percent, expected):
        assert format_effect(percent) == expected

    def test_vif_and_plural(self):
        assert format_vif(float("inf")) == "inf"
        assert format_vif(2.345) == "2.35"
        assert pluralize(1, "draw") == "1 draw"
        assert pluralize(3, "observation") == "3 observations"


class TestReports:
    def _draws(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(2, 100, 3))
        values[:, :, 2] = rng.gamma(2.0, 0.5, size=(2, 100))
        return PosteriorDraws(
            draws=values,
            param_names=["(Intercept)", "x0[1]", "sigma0_sq"],
            param_kinds=["fixed", "fixed", "variance"],
            loglik_pointwise=np.log(rng.uniform(0.2, 0.8, size=(2, 100, 4))),
            logpost=np.zeros((2, 100)),
            accept_rates=[{}, {}],
            label="ri",
        )

    def test_fit_table(self):
        table = ReportExporter.fit_table(build_fit_report(self._draws()))
        assert list(table["Variable"]) == ["(Intercept)", "x0[1]", "sd(Intercept)"]
        assert table["Effect"].iloc[-1] == ""

    def test_fit_text(self):
        text = ReportExporter.fit_text(build_fit_report(self._draws(), response_name="injury", mode="Autonomous"))
        assert "MODEL ri: response 'injury' (Autonomous)" in text
        assert "4 observations, 200 posterior draws" in text
        assert "WAIC" in text and "LOOIC" in text

    def test_comparison_text(self):
        def fit(label, value):
            return ModelFit(label, WaicResult(0.0, 0.0, value, 1.0),
                            LooResult(0.0, value, np.zeros(1), 0, 1.0, 0.0))

        text = ReportExporter.comparison_text(compare_models([fit("a", 10.0), fit("b", 8.0)]))
        assert "Best by WAIC: b" in text

    def test_vif_text(self):
        text = ReportExporter.vif_text(screen(random_dataset()))
        assert "Threshold 10.0: PASS" in text


class TestHasher:
    """Digests."""

    def test_config_hash_is_order_free(self):
        hasher = ArtifactHasher()
        assert hasher.hash_config({"a": 1, "b": 2}) == hasher.hash_config({"b": 2, "a": 1})
        assert hasher.hash_config({"a": 1}) != hasher.hash_config({"a": 2})

    def test_array_hash_sees_dtype_and_shape(self):
        hasher = ArtifactHasher()
        values = np.arange(6)
        assert hasher.hash_arrays([values]) != hasher.hash_arrays([values.reshape(2, 3)])
        assert hasher.hash_arrays([values]) != hasher.hash_arrays([values.astype(np.float64)])
        assert hasher.hash_arrays([None]) != hasher.hash_arrays([np.zeros(0)])

    def test_payload_boundaries(self):
        hasher = ArtifactHasher(chunk_size=2)
        assert hasher.digest_bytes([b"ab", b"c"]) != hasher.digest_bytes([b"a", b"bc"])

    def test_verify_and_short(self):
        digest = ArtifactHasher().digest_bytes([b"x"])
        assert ArtifactHasher.verify_fingerprint(digest.upper(), digest)
        assert short_digest(digest) == digest[:12]


class TestFiles:
    """Artifact files."""

    def test_header_lines(self):
        header = ArtifactHeader(kind="trace", version="1.0.0", config_hash="abc", seed=3,
                                extra={"mode": "Autonomous", "model": "ri"})
        assert header.render().splitlines() == [
            "# crashbayes trace", "# version: 1.0.0", "# config_hash: abc", "# seed: 3",
            "# mode: Autonomous", "# model: ri",
        ]

    def test_frame_skips_header(self, tmp_path):
        path = write_frame(tmp_path / "t.csv", ArtifactHeader("t", "1", "h", 0),
                           pd.DataFrame({"a": [0.1234567890123], "b": [1]}))
        frame = read_frame(path)
        assert list(frame.columns) == ["a", "b"]
        assert "\n0.123456789,1\n" in path.read_text(encoding="utf-8")

    def test_dataset_files(self, tmp_path):
        data = random_dataset(level2=True)
        path = save_coded_dataset(data, tmp_path / "d.csv")
        assert (tmp_path / "d.meta.yaml").is_file()
        loaded = load_coded_dataset(path)
        assert loaded.fingerprint() == data.fingerprint()
        assert loaded.column_names == data.column_names

    def test_tampered_dataset(self, tmp_path):
        path = save_coded_dataset(random_dataset(), tmp_path / "d.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        last = lines[-1].split(",")
        last[1] = "0" if last[1] == "1" else "1"
        lines[-1] = ",".join(last)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_coded_dataset(path)

    def test_missing_input(self, tmp_path):
        with pytest.raises(UsageError):
            FileValidator.validate_input_path(tmp_path / "missing.csv")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("a: [1, 2", encoding="utf-8")
        with pytest.raises(UsageError):
            read_yaml(path)
