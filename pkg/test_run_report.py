import math

import pandas as pd

from harness import SERIES_COLUMNS
from run_report import generate_run_report, summary_checks

SUMMARY = {
    'steps': 10, 'final_time': 1e-3, 'final_energy': -2.5, 'worst_slack': -1e-6,
    'energy_violations': 0, 'max_bulk_drift': 1e-14, 'max_bottom_drift': 2e-14, 'max_top_drift': 0.0,
    'mean_newton_iters': 3.2, 'max_newton_iters': 5, 'max_residual': 5e-11, 'max_scheme_residual': 3e-8,
}


def test_summary_checks_grade_scheme_and_newton_residuals_separately():
    rows = {name: (value, status) for name, value, status in summary_checks(SUMMARY)}
    assert rows['scheme_residual'] == (3e-8, 'Marginal')
    assert rows['newton_residual'] == (5e-11, 'Pass')
    assert rows['mass_drift'] == (2e-14, 'Pass')
    assert rows['energy_slack'][1] == 'Pass'


def test_missing_scheme_residual_is_not_a_pass():
    summary = {k: v for k, v in SUMMARY.items() if k != 'max_scheme_residual'}
    rows = {name: (value, status) for name, value, status in summary_checks(summary)}
    assert math.isnan(rows['scheme_residual'][0])
    assert rows['scheme_residual'][1] == 'Fail'


def test_run_report_builds_pdf():
    series = pd.DataFrame([[1e-4 * (n + 1), -2.5, 0.0, 0.0, 0.0, 1e-3, 3, 5e-11, 3e-8] for n in range(12)],
                          columns=SERIES_COLUMNS)
    pdf, err = generate_run_report(series, SUMMARY, ['eps = 0.02'])
    assert err is None
    assert pdf[:4] == b'%PDF'
