from django.conf import settings

from kmunet.cli import KmCommand
from segdata.dataset import load_dataset
from segdata.samples import parse_size
from segnet.checkpoint import load_checkpoint
from training.loops import evaluate


class Command(KmCommand):
    help = "Score a checkpoint on a dataset directory: IoU and F1 per image and their means."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--data", required=True, help="Dataset directory with index.txt")
        parser.add_argument("--threshold", type=float, default=None, help="Probability cut-off (default KM_THRESHOLD)")
        parser.add_argument("--image-size", default=None, help="Resize samples to HxW on load")
        parser.add_argument("--batch-size", type=int, default=8)

    def handle(self, *args, **options):
        threshold = settings.KM_THRESHOLD if options["threshold"] is None else options["threshold"]
        size = parse_size(options["image_size"]) if options["image_size"] else None
        model = load_checkpoint(options["ckpt"])
        samples = load_dataset(options["data"], size=size)
        report = evaluate(model, samples, threshold=threshold, batch_size=max(1, options["batch_size"]))
        for sample_id, iou, f1 in report.rows:
            self.stdout.write(f"{sample_id}: IoU {iou:.4f} F1 {f1:.4f}")
        self.success(f"mean IoU {report.mean_iou:.4f} mean F1 {report.mean_f1:.4f} over {len(report.rows)} images")
