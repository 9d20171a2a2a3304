import numpy as np
import pytest

from checks import PROPERTIES, THRESHOLDS, get_status_label, run_checks


def test_every_property_has_a_threshold():
    assert set(PROPERTIES) <= set(THRESHOLDS)


def test_status_labels():
    assert get_status_label('lh_round_trip', 1e-13) == 'Pass'
    assert get_status_label('lh_round_trip', 1e-10) == 'Marginal'
    assert get_status_label('lh_round_trip', 1e-8) == 'Fail'
    assert get_status_label('lh_round_trip', np.nan) == 'Fail'
    assert get_status_label('lh_positivity', 3.5) == 'Pass'
    assert get_status_label('lh_positivity', -1e-3) == 'Fail'
    assert get_status_label('contact_angle', 0.1) == 'N/A'


def test_property_suite_passes_on_small_grids():
    df = run_checks((4, 8))
    assert len(df) == 2 * len(PROPERTIES)
    failed = df[df['status'] != 'Pass']
    assert failed.empty, failed.to_string()


@pytest.mark.parametrize('seed', [1, 2, 3])
def test_property_suite_is_seed_independent(seed):
    df = run_checks((8,), seed=seed)
    assert (df['status'] == 'Pass').all(), df[df['status'] != 'Pass'].to_string()
