"""
This module defines the configuration shared by the library and the CLI.

Constants:
- FORMAT_VERSION: Version tag written at the head of every file we produce.
- THREADS: Worker cap for parallel library calls (env BN_SHAPLEY_THREADS).
- DATABASE: Path of the SQLite run ledger (env BN_SHAPLEY_DB).
- LOG_LEVEL: Logging level used by the CLI (env BN_SHAPLEY_LOG_LEVEL).
- PRIOR_*: Vague conjugate prior hyperparameters.
- GIBBS_*: Default chain settings.
- NESTED_*: Default nested-sampling settings for model-uncertainty attribution.
- PSD_TOLERANCE, BACK_ENGINEER_EPS, MAX_BRUTEFORCE_FACTORS: numeric guards.
- MABS_RESIDUAL_SHARES: Per-unit residual share of the simulated mAbs CQAs.

Values read from the environment are loaded once, at import, through python-dotenv.
"""

import os
from dotenv import load_dotenv

load_dotenv()


def _env_int(name, default, minimum=None):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    if minimum is not None:
        value = max(value, minimum)
    return value


# === File Configs ===
FORMAT_VERSION = 1
DATABASE = os.getenv("BN_SHAPLEY_DB", "bn_shapley_runs.db")
TABLE_RUNS = "runs"
TABLE_ARTIFACTS = "artifacts"

# === Runtime Configs ===
THREADS = _env_int("BN_SHAPLEY_THREADS", 1, minimum=1)
LOG_LEVEL = os.getenv("BN_SHAPLEY_LOG_LEVEL", "INFO").upper()

# === Prior Configs ===
PRIOR_MEAN_VARIANCE = 1.0e6  # sigma0^2
PRIOR_BETA_MEAN = 0.0  # theta0
PRIOR_BETA_VARIANCE = 1.0e6  # tau0^2
PRIOR_KAPPA = 0.02
PRIOR_LAMBDA = 0.02

# === Gibbs Configs ===
GIBBS_BURNIN = 500
GIBBS_THIN = 10
GIBBS_DRAWS = 1000

# === Nested Sampling Configs ===
NESTED_THIN = 5
NESTED_OUTER = 5
NESTED_INNER = 20
NESTED_PERMUTATIONS = 500

# === Numeric Guards ===
PSD_TOLERANCE = 1.0e-8
BACK_ENGINEER_EPS = 1.0e-9
MAX_BRUTEFORCE_FACTORS = 20

# === mAbs Configs ===
# Residual share of each CQA's marginal variance, per unit operation.
MABS_RESIDUAL_SHARES = {
    "main fermentation": 0.01,
    "centrifuge": 0.002,
    "chromatography": 0.0005,
    "filtration": 0.0001,
}


def threads():
    """Return the current worker cap, re-reading the environment."""
    return _env_int("BN_SHAPLEY_THREADS", THREADS, minimum=1)
