"""Reference GAUSSBUMP-1D density from a run ten times longer than the default budget.

Writes tests/data/gaussbump_m.csv (interval placement, n = nt = 64).
"""
import sys
from pathlib import Path

from mfgdual.config import gaussbump_1d
from mfgdual.experiments import execute
from mfgdual.fieldio import write_field_csv


def main(out):
    cfg = gaussbump_1d().replace(solver={"gap_tol": 1e-300, "feas_tol": 1e-300, "max_iters": 2000})
    res = execute(cfg)
    print(f"iter={res.state.iter} gap_rel={res.report.gap_relative:.3e} cont={res.report.continuity_residual:.3e}")
    write_field_csv(out, res.state.m)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "data" / "gaussbump_m.csv")
