from kmunet.cli import KmCommand, resolve_seed
from numerics.exceptions import VerificationError
from segnet.verification import SUITE_NAMES, run_suites


class Command(KmCommand):
    help = "Run the 64-bit finite-difference gradient suites; exits 2 if any check fails."

    def add_arguments(self, parser):
        parser.add_argument("--module", default="all", help=f"all or one of {', '.join(SUITE_NAMES)}")
        parser.add_argument("--seed", type=int, default=None)

    def handle(self, *args, **options):
        results = run_suites(options["module"], seed=resolve_seed(options["seed"]))
        failed = []
        for result in results:
            label, report = result.worst
            line = f"{result.name}: worst relative error {report.max_rel_error:.3e} ({label})"
            if result.passed:
                self.stdout.write(self.style.SUCCESS(line))
            else:
                self.stdout.write(self.style.ERROR(line + " FAILED"))
                failed.append(f"{result.name} ({label})")
        if failed:
            raise VerificationError(f"gradient check failed for: {', '.join(failed)}")
