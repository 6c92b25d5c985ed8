"""Exception hierarchy shared by all modules.

Every error carries a short machine-readable ``code`` used by the CLI in its
JSON error reports.  Errors that encode an expected negative answer (an
obstruction to forcing, a missing heteroclinic connection) subclass
:class:`NegativeResult` so the CLI can map them to exit code 2.
"""


class KamError(Exception):
    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"code": self.code, "message": str(self)}
        for key, val in self.details.items():
            try:
                out[key] = val.tolist()
            except AttributeError:
                out[key] = val
        return out


class NegativeResult(KamError):
    code = "negative"


class ModelEvaluationError(KamError):
    code = "model_evaluation"


class IntegrationEscapeError(KamError):
    code = "integration_escape"


class InvalidCoverError(KamError):
    code = "invalid_cover"


class GridTooLargeError(KamError):
    code = "grid_too_large"


class BackpointersUnavailableError(KamError):
    code = "backpointers_unavailable"


class NonConvergenceError(KamError):
    code = "non_convergence"


class NumericalInconsistencyError(KamError):
    code = "numerical_inconsistency"


class AlphaTooLooseError(KamError):
    code = "alpha_too_loose"


class ToleranceTooTightError(KamError):
    code = "tolerance_too_tight"


class BarrierTooCoarseError(KamError):
    code = "barrier_too_coarse"


class BrokenCalibrationError(KamError):
    code = "broken_calibration"


class AcyclicityError(KamError):
    code = "acyclicity"


class ObstructionError(NegativeResult):
    code = "obstruction"


class NoConnectionError(NegativeResult):
    code = "no_connection"


class ConfigError(KamError):
    code = "config"
