from functools import wraps
import logging

import click
from pydantic import ValidationError

from ..core import DiscreteMeasure
from ..errors import (
    DimensionMismatchError,
    MeasureFileError,
    ParameterRangeError,
    ParapotError,
    SignedMeasureError,
    StabilityError,
)


EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARSE_ERROR = 2
EXIT_INTERNAL_ERROR = 3

INPUT_ERRORS = (MeasureFileError, DimensionMismatchError, ParameterRangeError, SignedMeasureError,
                 StabilityError, ValidationError)


def nonnegative_measure_required(f):
    """
    Decorator rejecting signed input on potential entry points.

    The measure is the first positional argument; callers split signed data with
    decompose_signed and evaluate the parts separately.
    """

    @wraps(f)
    def decorated_function(mu, *args, **kwargs):
        if not isinstance(mu, DiscreteMeasure):
            raise TypeError(f"{f.__name__} expects a DiscreteMeasure, got {type(mu).__name__}")
        if not mu.is_nonnegative():
            raise SignedMeasureError(f"{f.__name__} needs a nonnegative measure; use decompose_signed first")
        return f(mu, *args, **kwargs)

    return decorated_function


def exit_code_for(reports) -> int:
    if reports is None:
        return EXIT_OK
    if isinstance(reports, int):
        return reports
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def cli_errors(f):
    """
    Decorator mapping a command's outcome to the process exit status.

    The command returns a report (or a list of them): exit 0 when all pass, 1 otherwise.
    An integer return is taken as the exit status itself.
    Bad input exits 2 and anything unexpected exits 3, both logged.
    """

    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            code = exit_code_for(f(*args, **kwargs))
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except INPUT_ERRORS as e:
            logging.error(f"Invalid input: {e}")
            click.echo(f"error: {e}", err=True)
            code = EXIT_PARSE_ERROR
        except ParapotError as e:
            logging.error(f"Check aborted: {e}")
            click.echo(f"error: {e}", err=True)
            code = EXIT_INTERNAL_ERROR
        except Exception as e:
            logging.exception(f"Internal error in {f.__name__}")
            click.echo(f"internal error: {e}", err=True)
            code = EXIT_INTERNAL_ERROR
        raise SystemExit(code)

    return decorated_function
