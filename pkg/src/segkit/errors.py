"""Exception types shared across the toolkit.

Each maps to a stable error code used in CLI exit-code handling.
"""


class SegkitError(Exception):
    code = "SEGKIT_ERROR"


class ShapeMismatchError(SegkitError):
    code = "SHAPE_MISMATCH"


class EmptyShapeError(SegkitError):
    code = "EMPTY_SHAPE"


class AxisOutOfRangeError(SegkitError):
    code = "AXIS_OUT_OF_RANGE"


class ClassOutOfRangeError(SegkitError):
    code = "CLASS_OUT_OF_RANGE"


class NonScalarLossError(SegkitError):
    code = "NON_SCALAR_LOSS"


class NegativeOutputExtentError(SegkitError):
    code = "NEGATIVE_OUTPUT_EXTENT"


class OddHeadDimError(SegkitError):
    code = "ODD_HEAD_DIM"


class DimNotDivisibleBy4Error(SegkitError):
    code = "DIM_NOT_DIVISIBLE_BY_4"


class NonFiniteOffsetError(SegkitError):
    code = "NONFINITE_OFFSET"


class InputRangeError(SegkitError):
    code = "INPUT_RANGE"


class NonSquareError(SegkitError):
    code = "NON_SQUARE"


class EmptyListError(SegkitError):
    code = "EMPTY_LIST"


class UnscoredRecordError(SegkitError):
    code = "UNSCORED_RECORD"


class AllClassesExcludedError(SegkitError):
    code = "ALL_CLASSES_EXCLUDED_OR_UNDEFINED"


class MissingRobotError(SegkitError):
    code = "MISSING_ROBOT"


class BadMagicError(SegkitError):
    code = "BAD_MAGIC"


class TruncatedError(SegkitError):
    code = "TRUNCATED"


class MaxvalUnsupportedError(SegkitError):
    code = "MAXVAL_UNSUPPORTED"


class BadFieldCountError(SegkitError):
    code = "BAD_FIELD_COUNT"


class UnknownSplitError(SegkitError):
    code = "UNKNOWN_SPLIT"


class ConfigInvalidError(SegkitError):
    code = "CONFIG_INVALID"


class EmptyDatasetError(SegkitError):
    code = "EMPTY_DATASET"


class TrainingDivergedError(SegkitError):
    code = "TRAINING_DIVERGED"
