from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from banditriage.records import (
    FEATURE_NAMES,
    Cohort,
    Gender,
    Indication,
    TestRecord,
    TestResult,
    TriState,
)
from banditriage.synthgen import GeneratorParams, RiskCoefficients


def make_record(
    record_id=0,
    test_date=date(2020, 3, 11),
    result=TestResult.NEGATIVE,
    gender=Gender.MALE,
    indication=Indication.OTHER,
    **symptoms,
):
    fields = {name: TriState.ABSENT for name in
              ("cough", "fever", "sore_throat", "shortness_of_breath", "head_ache")}
    fields.update(symptoms)
    return TestRecord(
        record_id=record_id,
        test_date=test_date,
        gender=gender,
        test_indication=indication,
        result=result,
        **fields,
    )


def feature_array(**kv) -> np.ndarray:
    """Vector in canonical feature order from keyword entries."""
    return np.array([float(kv.get(name, 0.0)) for name in FEATURE_NAMES])


def small_params(**overrides) -> GeneratorParams:
    """A fast, signal-bearing generator parameterization for unit tests."""
    defaults = dict(
        n_per_week=400,
        weeks=(1, 4),
        feature_prevalence=feature_array(
            cough=0.3, fever=0.25, sore_throat=0.2, shortness_of_breath=0.15,
            head_ache=0.2, contact_with_confirmed=0.1, abroad=0.05,
            other_indication=0.85, female=0.5,
        ),
        coefficients=RiskCoefficients(
            weights=feature_array(cough=0.8, fever=0.9, head_ache=1.3,
                                  contact_with_confirmed=2.2),
            intercept=-2.5,
        ),
        seed=11,
    )
    defaults.update(overrides)
    return GeneratorParams(**defaults)


@pytest.fixture
def toy_cohort() -> Cohort:
    """Two weeks, four records each, labels hand-picked."""
    recs = []
    specs = [
        # (date, positive?, contact?, cough?)
        (date(2020, 3, 9), True, True, True),
        (date(2020, 3, 10), False, False, True),
        (date(2020, 3, 11), True, True, False),
        (date(2020, 3, 12), False, False, False),
        (date(2020, 3, 16), True, False, True),
        (date(2020, 3, 17), False, True, False),
        (date(2020, 3, 18), False, False, False),
        (date(2020, 3, 19), True, True, True),
    ]
    for i, (d, pos, contact, cough) in enumerate(specs):
        recs.append(
            make_record(
                record_id=i,
                test_date=d,
                result=TestResult.POSITIVE if pos else TestResult.NEGATIVE,
                indication=Indication.CONTACT_WITH_CONFIRMED if contact else Indication.OTHER,
                cough=TriState.PRESENT if cough else TriState.ABSENT,
            )
        )
    return Cohort.from_records(recs)
