import argparse

MODES = ["gen-data", "train", "fit", "fit-ground", "eval", "sample"]

def create_parser():
    """Create and configure the argument parser."""
    parser = argparse.ArgumentParser(
        prog="groundmotion",
        description="groundmotion - motion priors with human-ground interaction",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python groundmotion.py --mode gen-data --data-dir ./data --seed 0
  python groundmotion.py --mode train --data-dir ./data --output ./runs/train --config train.yaml
  python groundmotion.py --mode train --data-dir ./data --output ./runs/train --resume
  python groundmotion.py --mode fit --checkpoint ./runs/train/model.pt --input ./data/observations --output ./runs/fit
  python groundmotion.py --mode fit-ground --checkpoint ./runs/train/model.pt --input ./data/observations --output ./runs/fitg
  python groundmotion.py --mode eval --input ./runs/fit --gt-dir ./data/sequences --output ./runs/eval
  python groundmotion.py --mode sample --checkpoint ./runs/train/model.pt --output ./runs/sample --seed 3
        """
    )

    parser.add_argument("--mode", choices=MODES, required=True, help="Command to run")
    parser.add_argument("--config", help="YAML file overriding the default configuration")
    parser.add_argument("--data-dir", help="Dataset directory (gen-data writes it, train reads it)")
    parser.add_argument("--checkpoint", help="Model checkpoint (.pt) to read")
    parser.add_argument("--output", help="Output directory for this run")
    parser.add_argument("--input", help="Observation directory (fit) or fitted-sequence directory (eval)")
    parser.add_argument("--gt-dir", help="Ground-truth sequence directory for eval and fitting planes")
    parser.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    parser.add_argument("--jobs", type=int, default=1, help="Parallel workers across independent sequences")
    parser.add_argument("--resume", action="store_true", help="Continue training from the checkpoint in --output")

    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Errors only, no progress bars")

    return parser
