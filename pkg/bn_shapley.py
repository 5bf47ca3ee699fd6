"""
bn-shapley command-line entry point.

Shapley-value risk and sensitivity analysis for linear-Gaussian process
networks: simulate batch data, learn the network coefficients by Gibbs
sampling, rank the criticality of process parameters and attribute the
estimation uncertainty of each ranking to individual model coefficients.

Usage:
    ```bash
    python bn_shapley.py simulate --batches 30 --seed 7 --out batches.csv
    python bn_shapley.py fit --data batches.csv --seed 1 --out draws.csv
    python bn_shapley.py sv --draws draws.csv --output-node X20 --out sv.json
    ```
"""

import sys

from src.cli import cli_run

if __name__ == "__main__":
    sys.exit(cli_run())
