from pathlib import Path

from kmunet.cli import KmCommand
from segdata.pnm import load_image, write_pnm
from segnet.checkpoint import load_checkpoint
from training.loops import activation_maps


class Command(KmCommand):
    help = "Export channel-mean activation heatmaps (P5) for every encoder stage and the bottleneck."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--image", required=True)
        parser.add_argument("--out", required=True, help="Output directory")

    def handle(self, *args, **options):
        model = load_checkpoint(options["ckpt"])
        maps = activation_maps(model, load_image(options["image"]))
        out = Path(options["out"])
        names = [f"stage{i + 1}" for i in range(len(maps) - 1)] + ["bottleneck"]
        for name, heatmap in zip(names, maps):
            write_pnm(out / f"{name}.pgm", heatmap)
        self.success(f"wrote {len(maps)} activation maps to {out}")
