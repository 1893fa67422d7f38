"""Exception hierarchy.

Every error carries the name of the operation that raised it so the CLI can
report which stage failed.
"""


class MapReidError(Exception):
    """Base class for all package errors."""

    op = "mapreid"

    def __init__(self, *args, op=None):
        super().__init__(*args)
        if op:
            self.op = op

    def __str__(self):
        return f"[{self.op}] {super().__str__()}"


class ZeroNormRow(MapReidError, ValueError):
    op = "l2_normalize"

    def __init__(self, index):
        self.index = int(index)
        super().__init__(f"row {self.index} has (near) zero norm")


class DimensionMismatch(MapReidError, ValueError):
    op = "shape-check"


class NotNormalized(MapReidError, ValueError):
    op = "cosine_similarity"


class NonFiniteInput(MapReidError, ValueError):
    op = "embedding-check"


class NoPositives(MapReidError, ValueError):
    op = "exact_ap"


class EmptyGallery(MapReidError, ValueError):
    op = "evaluate"


class AllQueriesSkipped(MapReidError, ValueError):
    op = "evaluate"


class IndexOutOfRange(MapReidError, IndexError):
    op = "ranking_list"


class NoPositiveQueries(MapReidError, ValueError):
    op = "soft_map"


class StateMismatch(MapReidError, ValueError):
    op = "map_loss_backward"


class LabelOutOfRange(MapReidError, ValueError):
    op = "cross_entropy_loss"


class DegenerateBatch(MapReidError, ValueError):
    op = "batch_hard_triplet_loss"


class NonFiniteLoss(MapReidError, FloatingPointError):
    op = "combine_losses"


class StaleCache(MapReidError, ValueError):
    op = "model.backward"


class ShapeMismatch(MapReidError, ValueError):
    op = "sgd_step"


class NonFiniteGradient(MapReidError, FloatingPointError):
    op = "sgd_step"


class InvalidSpec(MapReidError, ValueError):
    op = "generate_synthetic"


class TooFewIdentities(MapReidError, ValueError):
    op = "pk_sampler"


class MissingClothingLabels(MapReidError, ValueError):
    op = "relabel_by_clothing"


class ParseError(MapReidError, ValueError):
    op = "load_labeled_set"

    def __init__(self, line, msg="cannot parse"):
        self.line = int(line)
        super().__init__(f"line {self.line}: {msg}")


class NonFiniteValue(MapReidError, ValueError):
    op = "load_labeled_set"

    def __init__(self, row, col):
        self.row, self.col = int(row), int(col)
        super().__init__(f"non-finite value at row {self.row}, column {self.col}")


class LabelColumnMissing(MapReidError, ValueError):
    op = "load_labeled_set"


class FormatError(MapReidError, ValueError):
    op = "binary-io"


class ManifestMismatch(MapReidError, ValueError):
    op = "validate_manifest"

    def __init__(self, field, declared, actual):
        self.field, self.declared, self.actual = field, declared, actual
        super().__init__(f"{field}: declared {declared}, found {actual}")


class InvalidConfig(MapReidError, ValueError):
    op = "config"
