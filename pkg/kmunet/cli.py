"""
Shared plumbing for the management commands.

Exit codes: 0 success, 1 validation error, 2 verification failure, 3 I/O error.
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from numerics.exceptions import KmUnetError, VerificationError
from numerics.tensor import debug_checks

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 1
EXIT_VERIFICATION = 2
EXIT_IO = 3


def describe_validation(detail):
    """Flatten DRF error details into ``key: message`` text."""
    if isinstance(detail, dict):
        parts = []
        for key, value in detail.items():
            text = describe_validation(value)
            parts.append(text if key == "non_field_errors" else f"{key}: {text}")
        return "; ".join(parts)
    if isinstance(detail, (list, tuple)):
        return "; ".join(describe_validation(item) for item in detail)
    return str(detail)


def resolve_seed(seed):
    return settings.KM_SEED if seed is None else seed


class KmCommand(BaseCommand):
    """Maps project exceptions to ``CommandError`` with the matching exit code."""

    def execute(self, *args, **options):
        try:
            with debug_checks(settings.KM_DEBUG):
                return super().execute(*args, **options)
        except CommandError:
            raise
        except VerificationError as exc:
            raise CommandError(str(exc), returncode=EXIT_VERIFICATION) from exc
        except OSError as exc:
            # CheckpointError and SampleIOError land here too.
            raise CommandError(str(exc), returncode=EXIT_IO) from exc
        except ValidationError as exc:
            raise CommandError(describe_validation(exc.detail), returncode=EXIT_VALIDATION) from exc
        except (KmUnetError, ValueError) as exc:
            raise CommandError(str(exc), returncode=EXIT_VALIDATION) from exc

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
