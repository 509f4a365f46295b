"""Exception types shared across modules."""


class StrataError(Exception):
    pass


class ValidationError(StrataError, ValueError):
    """Invalid input. ``field`` names the offending key/attribute when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ZeroRespondents(StrataError):
    """A stratum has no observed respondents (z3 + z4 == 0)."""

    def __init__(self, stratum: int | None = None):
        self.stratum = stratum
        where = "" if stratum is None else f" in stratum {stratum}"
        super().__init__(f"no observed respondents{where}")


class DegenerateStratum(StrataError):
    """Response cells carry no probability mass (p3 + p4 == 0)."""


class AllDiscarded(StrataError):
    """Every Monte Carlo replicate was discarded."""
