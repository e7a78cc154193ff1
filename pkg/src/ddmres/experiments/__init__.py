"""Reproduction of the convergence and Gibbs studies."""
from .harness import (EXPERIMENTS, ConvergenceTable, ExperimentSpec, FitResult, SampleTable,
                      fit_rate, run_experiment)
from .output import format_csv, write_results

__all__ = ["EXPERIMENTS", "ConvergenceTable", "ExperimentSpec", "FitResult", "SampleTable",
           "fit_rate", "run_experiment", "format_csv", "write_results"]
