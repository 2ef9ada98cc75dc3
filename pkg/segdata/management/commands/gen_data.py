from kmunet.cli import KmCommand, resolve_seed
from segdata.dataset import save_dataset
from segdata.samples import parse_size
from segdata.synthetic import gen_synthetic


class Command(KmCommand):
    help = "Generate a synthetic segmentation dataset (images/, masks/, index.txt)."

    def add_arguments(self, parser):
        parser.add_argument("--out", required=True, help="Output dataset directory")
        parser.add_argument("--n", type=int, required=True, help="Number of samples")
        parser.add_argument("--size", default="64x64", help="Sample size as HxW (multiples of 32)")
        parser.add_argument("--seed", type=int, default=None, help="Generation seed (defaults to KM_SEED)")
        parser.add_argument("--workers", type=int, default=None, help="Generate on a thread pool")

    def handle(self, *args, **options):
        h, w = parse_size(options["size"])
        samples = gen_synthetic(
            options["n"], h, w, resolve_seed(options["seed"]), workers=options["workers"]
        )
        save_dataset(samples, options["out"])
        self.success(f"wrote {len(samples)} samples ({h}x{w}) to {options['out']}")
