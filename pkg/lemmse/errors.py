"""
Exceptions raised by lemmse. Each carries a stable ``code`` that the command
line front end writes to ``error.json``, and the process exit status for it.
"""


class LemmseError(ValueError):
    code = "lemmse_error"
    exit_status = 1

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InputError(LemmseError):
    exit_status = 2


class ShapeMismatch(InputError):
    code = "shape_mismatch"


class DimensionMismatch(InputError):
    code = "dimension_mismatch"


class MixedShapes(InputError):
    code = "mixed_shapes"


class ConfigError(LemmseError):
    code = "invalid_config"
    exit_status = 3


class NonSymmetric(ConfigError):
    code = "non_symmetric"


class NegativeEigenvalueBeyondTolerance(ConfigError):
    code = "negative_eigenvalue"


class NonPositiveEpsilon(ConfigError):
    code = "non_positive_epsilon"


class NonPositiveStd(ConfigError):
    code = "non_positive_std"


class SideTooLarge(ConfigError):
    code = "side_too_large"


class UnsupportedCombination(ConfigError):
    code = "unsupported_combination"


class DenseLimitExceeded(ConfigError):
    code = "dense_limit_exceeded"


class SizeLimitExceeded(ConfigError):
    code = "size_limit_exceeded"


class NumericalError(LemmseError):
    exit_status = 4


class AllWeightsOffSupport(NumericalError):
    code = "all_weights_off_support"


class EmptyStratum(NumericalError):
    code = "empty_stratum"


class InsufficientRetention(NumericalError):
    code = "insufficient_retention"


class IOFailure(LemmseError):
    exit_status = 5


class UnreadableFile(IOFailure):
    code = "unreadable_file"


class UnsupportedBitDepth(IOFailure):
    code = "unsupported_bit_depth"
