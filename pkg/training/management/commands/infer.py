from django.conf import settings

from kmunet.cli import KmCommand
from segdata.pnm import load_image, save_mask
from segnet.checkpoint import load_checkpoint
from training.loops import predict_mask


class Command(KmCommand):
    help = "Segment one P5/P6 image and write the binary mask as P5."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--image", required=True)
        parser.add_argument("--out", required=True)
        parser.add_argument("--threshold", type=float, default=None)

    def handle(self, *args, **options):
        threshold = settings.KM_THRESHOLD if options["threshold"] is None else options["threshold"]
        model = load_checkpoint(options["ckpt"])
        mask = predict_mask(model, load_image(options["image"]), threshold)
        save_mask(mask, options["out"])
        self.success(f"wrote {mask.shape[1]}x{mask.shape[0]} mask to {options['out']} ({int(mask.sum())} foreground pixels)")
