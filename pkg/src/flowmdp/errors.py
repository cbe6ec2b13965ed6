"""Exception hierarchy and process exit codes.

Every failure an operator can hit maps to one of four categories, each with
its own exit code so scripts can branch on the kind of failure without
parsing stderr.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CONTRACT = 4
EXIT_VERIFY = 5


class FlowMdpError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    category = "error"


class ConfigError(FlowMdpError):
    """A config file is missing, malformed, or violates its invariants."""

    exit_code = EXIT_CONFIG
    category = "config"


class InputOutputError(FlowMdpError):
    """A required file is missing or a file has an invalid format."""

    exit_code = EXIT_IO
    category = "io"


class ContractViolation(FlowMdpError):
    """An internal precondition or invariant was broken.

    Raised for out-of-range indices, undersized sub-grids, inconsistent
    array dimensions and similar programming/state errors. These are never
    swallowed: a violation always aborts the operation.
    """

    exit_code = EXIT_CONTRACT
    category = "contract"


class VerificationFailure(FlowMdpError):
    """A verification run found a failing check."""

    exit_code = EXIT_VERIFY
    category = "verification"


_BY_CATEGORY = None


def error_for_category(category: str, message: str) -> FlowMdpError:
    """Rebuild the matching exception from a (category, message) pair.

    Used by clients to turn a service error response back into the same
    exception type the service raised.
    """
    global _BY_CATEGORY
    if _BY_CATEGORY is None:
        _BY_CATEGORY = {
            cls.category: cls
            for cls in (ConfigError, InputOutputError, ContractViolation, VerificationFailure)
        }
    return _BY_CATEGORY.get(category, FlowMdpError)(message)
