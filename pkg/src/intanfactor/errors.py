"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for validation failures,
3 for data errors, 4 for numeric failures.
"""


class IntanError(Exception):
    exit_code = 3


class ValidationError(IntanError):
    exit_code = 2


class DataError(IntanError):
    exit_code = 3


class NumericError(IntanError):
    exit_code = 4


# -- validation -------------------------------------------------------------

class ConfigError(ValidationError):
    pass


class SchemaMismatch(ValidationError):
    def __init__(self, path, missing):
        self.path = str(path)
        self.missing = list(missing)
        super().__init__(f"{self.path}: missing required column(s): {', '.join(self.missing)}")


class RowRejected(ValidationError):
    """Raised in strict mode for the first row that fails validation."""

    def __init__(self, path, row, reason):
        self.path = str(path)
        self.row = row
        self.reason = reason
        super().__init__(f"{self.path}:{row}: {reason}")


class InvalidSpec(ValidationError):
    pass


class MalformedSic(ValidationError):
    pass


# -- data -------------------------------------------------------------------

class FileUnreadable(DataError):
    pass


class EmptyInput(DataError):
    pass


class DuplicateKey(DataError):
    def __init__(self, path, key, rows):
        self.key = key
        self.rows = tuple(rows)
        super().__init__(f"{path}: duplicate key {key} at rows {', '.join(map(str, self.rows))}")


class GapInSeries(DataError):
    def __init__(self, month):
        self.month = month
        super().__init__(f"factor series has no observation for {month}")


class OrphanReturns(DataError):
    def __init__(self, firm_ids):
        self.firm_ids = tuple(sorted(firm_ids))
        shown = ", ".join(self.firm_ids[:10])
        more = "" if len(self.firm_ids) <= 10 else f" (+{len(self.firm_ids) - 10} more)"
        super().__init__(f"returns reference firms without fundamentals: {shown}{more}")


class WindowMismatch(DataError):
    pass


class WindowUncovered(DataError):
    pass


class NoUsableFit(DataError):
    def __init__(self, year, n, threshold):
        self.year = year
        super().__init__(
            f"fiscal year {year}: only {n} firm-years for the SG&A model, need {threshold}")


class InsufficientUniverse(DataError):
    pass


class EmptyCell(DataError):
    def __init__(self, year, cell, month=None):
        self.year = year
        self.cell = cell
        self.month = month
        where = f" in {month}" if month is not None else ""
        super().__init__(f"portfolio {cell} formed in {year} has no members{where}")


class MissingVariable(DataError):
    pass


# -- numeric ----------------------------------------------------------------

class RankDeficient(NumericError):
    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__(f"design matrix is rank deficient in columns: {', '.join(self.columns)}")


class LengthMismatch(NumericError):
    pass


class TooFewObservations(NumericError):
    pass


class ZeroVariance(NumericError):
    pass
