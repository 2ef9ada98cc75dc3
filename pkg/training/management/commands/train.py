from kmunet.cli import KmCommand
from training.loops import mean_std, run_training
from training.runconfig import load_run_config, log_run_config


class Command(KmCommand):
    help = "Train KM-UNet from a run config; writes history.csv, best.ckpt and final.ckpt."

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None, help="key = value run config file")
        parser.add_argument("--runs", type=int, default=1, help="Independent runs with seeds seed, seed+1, ...")
        parser.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
            help="Override one config key (repeatable)",
        )

    def handle(self, *args, **options):
        if options["runs"] < 1:
            raise ValueError(f"--runs must be >= 1, got {options['runs']}")
        run_config = load_run_config(options["config"], options["overrides"])
        log_run_config(run_config)
        summaries = run_training(run_config, runs=options["runs"])
        for s in summaries:
            self.stdout.write(
                f"run {s.run} (seed {s.seed}): train IoU {s.train_iou:.4f} F1 {s.train_f1:.4f} "
                f"best val IoU {s.best_val_iou:.4f} -> {s.output_dir}"
            )
        if len(summaries) > 1:
            iou_mean, iou_std = mean_std([s.train_iou for s in summaries])
            f1_mean, f1_std = mean_std([s.train_f1 for s in summaries])
            self.stdout.write(f"mean over {len(summaries)} runs: train IoU {iou_mean:.4f} ± {iou_std:.4f}, F1 {f1_mean:.4f} ± {f1_std:.4f}")
        self.success(f"final train IoU {summaries[-1].train_iou:.4f}")
