"""Multinomial logit choice model."""

import json
from importlib import resources

from .model import (
    ASC,
    ChoiceData,
    ChoiceObservation,
    EstimationSettings,
    MNLEstimate,
    Term,
    UtilitySpec,
    asc_only_spec,
    check_identification,
    design,
    estimate,
    gradient,
    hessian,
    log_likelihood,
    null_log_likelihood,
    probabilities,
    read_choice_csv,
    rho_squared,
    simulate,
    write_choice_csv,
)
from .report import ReportTable, TableRow, emit_csv, emit_text, parse_csv, parse_text, report_table


def reference_spec() -> UtilitySpec:
    """The bundled 20-parameter specification: seven constants plus demographic and income terms."""
    with resources.files("crisis_concerns.data").joinpath("reference_spec.json").open("r", encoding="utf-8") as fh:
        return UtilitySpec.from_dict(json.load(fh))
