"""
Configuration settings for the crashbayes toolkit.

All default settings are centralized here for easy modification. Run-time
YAML documents override these values; command-line flags override both.
"""

# Toolkit metadata
TOOLKIT_NAME = "crashbayes"
TOOLKIT_DESCRIPTION = (
    "Hierarchical Bayesian logistic regression for crash records: ingestion, "
    "VIF screening, MCMC fitting, odds ratios and WAIC/PSIS-LOO comparison."
)

# Input parsing
CSV_ENCODING = "utf-8"
UNKNOWN_LEVEL = "Unknown"
DATE_FORMAT = "%Y-%m-%d"

# Metadata columns of the crash table (everything else must be a catalog variable)
CRASH_METADATA_COLUMNS = (
    "crash_id",
    "date",
    "manufacturer",
    "vehicle_type",
    "vehicle_year",
    "engaged_throughout",
    "manual_stated",
    "disengagement_mentioned",
    "narrative_initiator",
    "narrative_causes",
)
REQUIRED_CRASH_COLUMNS = CRASH_METADATA_COLUMNS[:8]

DISENGAGEMENT_COLUMNS = (
    "date",
    "manufacturer",
    "vehicle_type",
    "initiator",
    "unwanted_other_participant",
    "unwanted_av_movement",
    "changing_lanes",
    "deceleration",
)

# Crash-type grouping for the alternative level-2 / level-3 unit
CRASH_TYPE_VARIABLE = "collision_type"
CRASH_TYPE_GROUPS = (
    "Rear-end",
    "Sideswipe",
    "Head-on",
    "Hit pedestrian",
    "Hit non-motor vehicle",
    "Others",
)

# Linkage-derived catalog variables and their levels (reference first)
LINKAGE_VARIABLES = {
    "disengagement": ("Absence", "Presence"),
    "initiator": ("No", "AV system", "Test driver"),
    "unwanted_other_participant": ("Absence", "Presence"),
    "unwanted_av_movement": ("Absence", "Presence"),
    "changing_lanes": ("Absence", "Presence"),
    "deceleration": ("Absence", "Presence"),
}

# Priors (coefficient variance, not standard deviation)
PRIOR_COEF_MEAN = 0.0
PRIOR_COEF_VARIANCE = 1000.0
PRIOR_VARIANCE_SHAPE = 0.001
PRIOR_VARIANCE_RATE = 0.001

# MCMC defaults (2 chains x 10,000 kept draws after 5,000 burn-in)
MCMC_N_CHAINS = 2
MCMC_N_BURNIN = 5000
MCMC_N_KEEP = 10000
MCMC_SEED = 20210301
MCMC_ADAPT_WINDOW = 50
MCMC_TARGET_ACCEPT = 0.35
MCMC_INITIAL_VARIANCE = 1.0
MCMC_STUCK_ACCEPT = 0.01

# Convergence diagnostic
CONVERGENCE_PROB = 0.95
CONVERGENCE_TOL = 1.1
MIN_DRAWS_PER_CHAIN = 10

# Posterior summaries
BCI_PROB = 0.95
MIN_SUMMARY_DRAWS = 100
QUANTILE_METHOD = "linear"  # type-7 interpolated order statistics

# Screening
VIF_THRESHOLD = 10.0
VIF_SINGULAR_TOL = 1e-10

# Information criteria
PSIS_MIN_DRAWS = 100
PSIS_BAD_K = 0.7
GPD_MIN_TAIL = 5
GPD_PRIOR_BS = 3
GPD_PRIOR_K = 10

# Synthetic data
SYNTH_ETA_CAP = 20.0
GRID_MASS_TOL = 1e-4

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

# Artifact layout
DATA_DIRNAME = "data"
SCREEN_DIRNAME = "screen"
FITS_DIRNAME = "fits"
COMPARE_DIRNAME = "compare"
SYNTH_DIRNAME = "synth"
TRACE_FILENAME = "trace.csv"
SUMMARY_CSV_FILENAME = "summary.csv"
SUMMARY_TEXT_FILENAME = "summary.txt"
CONVERGENCE_FILENAME = "convergence.csv"
CRITERIA_FILENAME = "criteria.yaml"
PLOTDATA_FILENAME = "plotdata.csv"
INGEST_REPORT_FILENAME = "ingest_report.txt"
FREQUENCY_FILENAME = "frequency.csv"
CONTINUOUS_FILENAME = "continuous.csv"

# Float rendering for CSV artifacts (fixed so reruns are byte-identical)
CSV_FLOAT_FORMAT = "%.10g"

# Emit flags default
DEFAULT_EMIT = {"text": True, "csv": True, "plotdata": True}

# Logging
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


# Helper functions for common conversions
def get_total_draws(n_chains=MCMC_N_CHAINS, n_keep=MCMC_N_KEEP):
    """Return the number of retained posterior draws across chains."""
    return n_chains * n_keep
