"""
Pipeline commands: ingest, screen, fit, compare, synth and report.

Each command reads the run config, writes header-stamped artifacts under the
output directory and returns a process exit code; errors propagate as
CrashBayesError subclasses carrying their own exit code.
"""

import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

import config
from src.cli.run_config import RunConfig
from src.core.dataset import (
    DrivingMode,
    ModePartition,
    VariableCatalog,
    describe_continuous,
    encode_design,
    link_disengagements,
    load_disengagements,
    load_records,
    partition_by_mode,
    tabulate_levels,
)
from src.core.errors import ConvergenceFailure, InsufficientDraws, MissingFit, UsageError
from src.core.evaluation import (
    FitReport,
    LooResult,
    ModelFit,
    ParameterSummary,
    WaicResult,
    build_fit_report,
    compare_models,
    odds_ratio_density,
)
from src.core.file_handler import (
    FileValidator,
    load_coded_dataset,
    read_artifact_yaml,
    read_frame,
    save_coded_dataset,
    write_frame,
    write_text,
    write_yaml,
)
from src.core.hasher import short_digest
from src.core.sampler import interval_ratio_diagnostic, run_mcmc
from src.core.screening import screen
from src.core.synthlab import (
    TruthScenario,
    coverage_experiment,
    generate_synthetic,
    structure_selection_experiment,
)
from src.utils.exporters import ReportExporter
from src.utils.formatters import format_duration, pluralize

logger = logging.getLogger(__name__)

SYNTH_EXPERIMENTS = ("generate", "coverage", "selection")


def dataset_path(run: RunConfig, mode: DrivingMode, label: str) -> Path:
    return run.out / config.DATA_DIRNAME / mode.value / f"{label}.csv"


def fit_dir(run: RunConfig, mode: DrivingMode, label: str) -> Path:
    return run.out / config.FITS_DIRNAME / mode.value / label


def screen_path(run: RunConfig, mode: DrivingMode, label: str) -> Path:
    return run.out / config.SCREEN_DIRNAME / mode.value / f"{label}.vif.csv"


def _labels(run: RunConfig, labels: Optional[Sequence[str]]) -> List[str]:
    if not labels:
        return [spec.label for spec in run.models]
    for label in labels:
        run.model(label)
    return list(labels)


def _load_partition(run: RunConfig, catalog: VariableCatalog) -> ModePartition:
    records = load_records(run.crashes, catalog)
    if run.disengagements is not None:
        diseng = load_disengagements(run.disengagements)
    else:
        logger.info("no disengagement file configured; linkage uses crash narratives only")
        diseng = []
    linked = link_disengagements(records, diseng, strict=run.strict_linkage)
    return partition_by_mode(linked)


def cmd_ingest(run: RunConfig) -> int:
    """Link, classify and encode records; write coded datasets and the ingestion report."""
    if run.catalog is None:
        raise UsageError("run config has no catalog path")
    if run.crashes is None:
        raise UsageError("run config has no crashes path")
    FileValidator.validate_input_path(run.crashes, "crashes")
    catalog = VariableCatalog.from_yaml(run.catalog)
    partition = _load_partition(run, catalog)
    FileValidator.validate_output_dir(run.out)
    data_dir = run.out / config.DATA_DIRNAME

    warnings = []
    classified = partition.autonomous + partition.conventional
    ambiguous = sorted(record.crash_id for record in classified if record.ambiguous_match)
    if ambiguous:
        warnings.append(f"ambiguous disengagement match, first record linked: {', '.join(ambiguous)}")
    if not classified:
        message = f"{run.crashes} holds no classifiable crash records; no datasets written"
        logger.warning(message)
        warnings.append(message)
    else:
        for mode in run.modes:
            records = partition.records(mode)
            if not records:
                message = f"no {mode.value} records; {mode.value} datasets skipped"
                logger.warning(message)
                warnings.append(message)
                continue
            for spec in run.models:
                dataset = encode_design(records, spec, catalog)
                save_coded_dataset(dataset, dataset_path(run, mode, spec.label),
                                   run.header("coded dataset", model=spec.label, mode=mode.value))
                logger.info("%s %s: %s, %d level-2 group(s)", mode.value, spec.label,
                            pluralize(dataset.n_rows, "row"), dataset.n_groups)

    frequency = tabulate_levels(partition, catalog)
    continuous = describe_continuous(classified, catalog)
    header = run.header("ingestion report")
    write_frame(data_dir / config.FREQUENCY_FILENAME, run.header("level frequencies"), frequency)
    write_frame(data_dir / config.CONTINUOUS_FILENAME, run.header("continuous statistics"), continuous)
    write_text(data_dir / config.INGEST_REPORT_FILENAME, header,
               ReportExporter.ingest_text(partition.counts(), partition.excluded, frequency, continuous, warnings))
    counts = partition.counts()
    logger.info("ingested: %d Autonomous, %d Conventional, %d excluded",
                counts[DrivingMode.AUTONOMOUS.value], counts[DrivingMode.CONVENTIONAL.value], counts["Excluded"])
    return config.EXIT_OK


def _require_dataset(run: RunConfig, mode: DrivingMode, label: str):
    path = dataset_path(run, mode, label)
    if not path.is_file():
        raise UsageError(f"no coded dataset at {path}; run 'ingest' first")
    return load_coded_dataset(path)


def cmd_screen(run: RunConfig, labels: Optional[Sequence[str]] = None) -> int:
    """VIF-screen every coded dataset; a FAIL verdict is reported, not fatal."""
    for mode in run.modes:
        for label in _labels(run, labels):
            dataset = _require_dataset(run, mode, label)
            report = screen(dataset, run.vif_threshold)
            header = run.header("vif screen", model=label, mode=mode.value, verdict=report.verdict)
            path = screen_path(run, mode, label)
            write_frame(path, header, report.to_frame())
            write_text(path.with_suffix(".txt"), header, ReportExporter.vif_text(report))
    return config.EXIT_OK


def _plain(value):
    """numpy scalars to builtins so safe_dump accepts them."""
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _criteria_document(report: FitReport, observations: str, convergence) -> Dict:
    return _plain({
        "label": report.label,
        "response": report.response_name,
        "mode": report.mode,
        "observations": observations,
        "n_draws": report.n_draws,
        "n_obs": report.n_obs,
        "waic": report.waic.to_dict(),
        "loo": report.loo.to_dict(),
        "pareto_k": [float(k) for k in report.loo.pareto_k],
        "converged": None if convergence is None else bool(convergence.overall_pass),
    })


def fit_one(run: RunConfig, mode: DrivingMode, label: str, skip_screen: bool = False) -> bool:
    """Fit one model to one mode's dataset and write its artifacts; returns convergence."""
    spec = run.model(label)
    dataset = _require_dataset(run, mode, label)
    if skip_screen:
        logger.info("%s %s: VIF screen skipped", mode.value, label)
    elif not screen_path(run, mode, label).is_file():
        raise UsageError(f"{mode.value} {label}: no VIF screen found; run 'screen' or pass --skip-screen")

    started = time.perf_counter()
    draws = run_mcmc(spec, dataset, run.mcmc, jobs=run.jobs)
    logger.info("%s %s: sampled in %s", mode.value, label, format_duration(time.perf_counter() - started))
    try:
        convergence = interval_ratio_diagnostic(draws)
    except InsufficientDraws as exc:
        logger.warning("%s %s: %s", mode.value, label, exc)
        convergence = None
    report = build_fit_report(draws, label=label, response_name=spec.response_name, mode=mode.value)

    directory = fit_dir(run, mode, label)
    fingerprint = dataset.fingerprint()
    logger.debug("%s %s: dataset %s", mode.value, label, short_digest(fingerprint))

    def header(kind):
        return run.header(kind, model=label, mode=mode.value, fingerprint=fingerprint)

    write_frame(directory / config.TRACE_FILENAME, header("trace"), draws.to_trace_frame())
    write_yaml(directory / config.CRITERIA_FILENAME, header("criteria"),
               _criteria_document(report, draws.fingerprint, convergence))
    if convergence is not None:
        write_frame(directory / config.CONVERGENCE_FILENAME, header("convergence"), convergence.to_frame())
    if run.emit.get("csv", True):
        write_frame(directory / config.SUMMARY_CSV_FILENAME, header("summary"), report.to_frame())
    if run.emit.get("text", True):
        write_text(directory / config.SUMMARY_TEXT_FILENAME, header("summary"),
                   ReportExporter.fit_text(report, convergence))
    if run.emit.get("plotdata", True):
        write_frame(directory / config.PLOTDATA_FILENAME, header("plot data"),
                    odds_ratio_density(draws, report.fixed))
    return convergence is None or convergence.overall_pass


def cmd_fit(run: RunConfig, labels: Optional[Sequence[str]] = None, skip_screen: bool = False,
            allow_unconverged: bool = False) -> int:
    """
    Fit the selected models in every selected mode.

    Raises:
        ConvergenceFailure: a fit failed the interval-ratio check and
            allow_unconverged is not set (artifacts are still written)
    """
    unconverged = []
    for mode in run.modes:
        for label in _labels(run, labels):
            if not fit_one(run, mode, label, skip_screen):
                unconverged.append(f"{mode.value}/{label}")
    if unconverged:
        message = f"convergence check failed for {', '.join(unconverged)}"
        if not allow_unconverged:
            raise ConvergenceFailure(message)
        logger.warning("%s (allowed)", message)
    return config.EXIT_OK


def load_model_fit(run: RunConfig, mode: DrivingMode, label: str) -> ModelFit:
    """
    Rebuild a ModelFit from stored criteria.

    Raises:
        MissingFit: the fit has not been run
    """
    path = fit_dir(run, mode, label) / config.CRITERIA_FILENAME
    if not path.is_file():
        raise MissingFit(f"no fit for {mode.value}/{label} at {path}")
    document = read_artifact_yaml(path, "criteria")
    w, lo = document["waic"], document["loo"]
    pareto_k = np.asarray(document.get("pareto_k") or [], dtype=float)
    return ModelFit(
        label=label,
        waic=WaicResult(lppd=w["lppd"], p_waic=w["p_waic"], waic=w["waic"], se=w["waic_se"]),
        loo=LooResult(elpd_loo=lo["elpd_loo"], looic=lo["looic"], pareto_k=pareto_k,
                      n_bad_k=int(lo["n_bad_k"]), se=lo["looic_se"], p_loo=lo["p_loo"]),
        fingerprint=document.get("observations", ""),
    )


def cmd_compare(run: RunConfig, labels: Optional[Sequence[str]] = None, name: str = "") -> int:
    """Rank stored fits of each mode by WAIC/LOO."""
    if name and not labels:
        if name not in run.comparisons:
            raise UsageError(f"no comparison named {name!r} in the run config")
        labels = run.comparisons[name]
    labels = _labels(run, labels)
    name = name or "models"
    for mode in run.modes:
        report = compare_models([load_model_fit(run, mode, label) for label in labels])
        base = run.out / config.COMPARE_DIRNAME / mode.value / name
        header = run.header("comparison", mode=mode.value, models=",".join(labels))
        write_frame(base.with_suffix(".csv"), header, report.to_frame())
        write_text(base.with_suffix(".txt"), header,
                   ReportExporter.comparison_text(report, f"MODEL COMPARISON: {name} ({mode.value})"))
        logger.info("%s %s: best by WAIC %s, best by LOO %s", mode.value, name,
                    report.best_by_waic, report.best_by_loo)
    return config.EXIT_OK


def cmd_synth(run: RunConfig, experiment: str = "generate", replications: Optional[int] = None) -> int:
    """Generate a synthetic dataset or run a seeded experiment on the configured scenario."""
    if experiment not in SYNTH_EXPERIMENTS:
        raise UsageError(f"unknown synth experiment {experiment!r}; choose from {SYNTH_EXPERIMENTS}")
    if run.scenario is None:
        raise UsageError("run config has no scenario path")
    scenario = TruthScenario.from_yaml(run.scenario)
    directory = run.out / config.SYNTH_DIRNAME
    header = run.header(f"synthetic {experiment}", scenario=scenario.label)

    if experiment == "generate":
        dataset = generate_synthetic(scenario)
        save_coded_dataset(dataset, directory / f"{scenario.label or 'scenario'}.csv", header)
    elif experiment == "coverage":
        result = coverage_experiment(scenario, run.mcmc, replications or 20, jobs=run.jobs)
        write_yaml(directory / "coverage.yaml", header, {
            "parameter": result.parameter,
            "truth": result.truth,
            "covered": result.covered,
            "replications": result.n_replications,
            "rate": result.rate,
            "intervals": [[float(low), float(high)] for low, high in result.intervals],
        })
        logger.info("coverage %d/%d", result.covered, result.n_replications)
    else:
        result = structure_selection_experiment(scenario, run.mcmc, replications or 10, jobs=run.jobs)
        frame = pd.DataFrame(result.waic_values)
        frame.insert(0, "winner", result.winners)
        frame.insert(0, "replication", range(len(result.winners)))
        write_frame(directory / "selection.csv", header, frame)
        logger.info("WAIC wins: %s", result.wins())
    return config.EXIT_OK


def load_fit_report(run: RunConfig, mode: DrivingMode, label: str) -> FitReport:
    """Rebuild a FitReport from a stored summary CSV and criteria."""
    directory = fit_dir(run, mode, label)
    summary_path = directory / config.SUMMARY_CSV_FILENAME
    if not summary_path.is_file():
        raise MissingFit(f"no summary for {mode.value}/{label} at {summary_path}")
    fit = load_model_fit(run, mode, label)
    criteria = read_artifact_yaml(directory / config.CRITERIA_FILENAME, "criteria")
    frame = read_frame(summary_path, "summary")
    summaries = [
        ParameterSummary(
            name=row["parameter"], estimate=row["estimate"], std_error=row["std_error"],
            bci_low=row["bci_low"], bci_high=row["bci_high"], odds_ratio=row["odds_ratio"],
            or_low=row["or_low"], or_high=row["or_high"], significant=bool(row["significant"]),
            kind=row["kind"],
        )
        for row in frame.to_dict(orient="records")
    ]
    return FitReport(
        label=label,
        response_name=criteria.get("response", ""),
        mode=mode.value,
        fixed=[s for s in summaries if s.kind == "fixed"],
        random_sd=[s for s in summaries if s.kind == "sd"],
        group_effects=[s for s in summaries if s.kind == "random"],
        waic=fit.waic,
        loo=fit.loo,
        n_draws=int(criteria.get("n_draws", 0)),
        n_obs=int(criteria.get("n_obs", 0)),
    )


def cmd_report(run: RunConfig, labels: Optional[Sequence[str]] = None) -> int:
    """Re-render every stored fit of each mode plus their comparison as one text report."""
    labels = _labels(run, labels)
    for mode in run.modes:
        sections = []
        fits = []
        for label in labels:
            try:
                sections.append(ReportExporter.fit_text(load_fit_report(run, mode, label)))
                fits.append(load_model_fit(run, mode, label))
            except MissingFit as exc:
                logger.warning("%s", exc)
        if not sections:
            raise MissingFit(f"no stored fits for {mode.value}")
        if len(fits) >= 2:
            sections.append(ReportExporter.comparison_text(compare_models(fits), f"MODEL COMPARISON ({mode.value})"))
        write_text(run.out / f"report_{mode.value}.txt", run.header("report", mode=mode.value), "\n".join(sections))
    return config.EXIT_OK
