from kmunet.cli import KmCommand, resolve_seed
from numerics.exceptions import ConfigError
from segdata.samples import parse_size
from segnet.benchmark import model_cost, run_benchmark
from training.runconfig import load_run_config


def parse_lengths(text):
    try:
        lengths = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--sizes must be comma-separated integers, got {text!r}") from None
    if not lengths or min(lengths) < 1:
        raise ConfigError(f"--sizes needs positive lengths, got {text!r}")
    return lengths


class Command(KmCommand):
    help = "Time a kernel over sequence lengths and report the model's static cost."

    def add_arguments(self, parser):
        parser.add_argument("--op", default="selective_scan")
        parser.add_argument("--sizes", default="1024,2048,4096", help="Comma-separated sequence lengths")
        parser.add_argument("--repeats", type=int, default=3)
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--config", default=None, help="Run config whose model cost is reported")
        parser.add_argument("--image-size", default="64x64", help="Input size for the MAC estimate")

    def handle(self, *args, **options):
        lengths = parse_lengths(options["sizes"])
        timings = run_benchmark(options["op"], lengths, options["repeats"], resolve_seed(options["seed"]))
        previous = None
        for timing in timings:
            line = f"{options['op']} L={timing.length}: {timing.seconds:.4f}s ({timing.tokens_per_second:,.0f} tokens/s)"
            if previous is not None:
                line += f" ratio vs L={previous.length}: {timing.seconds / previous.seconds:.2f}"
            self.stdout.write(line)
            previous = timing

        run_config = load_run_config(options["config"])
        h, w = run_config.image_size or parse_size(options["image_size"])
        params, macs = model_cost(run_config.model, h, w)
        self.stdout.write(f"model parameters: {params:,}")
        self.stdout.write(f"estimated MACs at {h}x{w}: {macs:,}")
