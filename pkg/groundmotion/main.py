import os
import sys
import json
import glob
import traceback
from concurrent.futures import ThreadPoolExecutor, as_completed

import numpy as np
import torch
from tqdm import tqdm

from .core.args import create_parser
from .core.config import (
    configure_logging, generator_settings_from, load_config, model_config_from, optim_config_from,
    train_config_from,
)
from .core.errors import EXIT_OK, ConfigError, GroundMotionError, exit_code_for
from .body.skeleton import load_skeleton
from .body.ground import GroundPlane, contact_labels, interaction_vector
from .data.synth import (
    Camera, MotionSequence, generate_sequence, perturb_observations, project_to_camera, random_tilt,
    stratify_by_hip_height, transform_sequence,
)
from .data.seqio import load_observations, load_sequence, save_observations, save_sequence
from .model.dual_prior import DualPriorModel, rollout
from .model.training import dataset_from_sequences, load_weights, save_weights, train
from .fitting.optimizer import fit_fixed_ground, fit_with_ground
from .eval.metrics import evaluate
from .utils.run_log import RunEventType, RunLogger, write_manifest
from .utils.ui import (
    display_eval_report, display_fit_report, print_error, print_header, print_info, print_success,
    print_warning, set_quiet,
)

CHECKPOINT_NAME = "model.pt"
LOSS_CURVE_NAME = "loss_curve.json"
EVAL_REPORT_NAME = "eval_report.json"


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n)]
    if missing:
        raise ConfigError(f"--mode {args.mode} needs {', '.join(missing)}")


def _npz_files(directory):
    if not os.path.isdir(directory):
        raise ConfigError(f"Directory not found: {directory}")
    files = sorted(glob.glob(os.path.join(directory, "*.npz")))
    if not files:
        raise ConfigError(f"No .npz sequence files in {directory}")
    return files


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _progress(config, args):
    return bool(config["runtime"].get("progress", True)) and not args.quiet


# =============================================================================
# COMMANDS
# =============================================================================

def _sequence_camera(seq, camera_config):
    """Configured camera offset, re-centered on the clip's mean pelvis position."""
    center = seq.joints()[:, 0].mean(0)
    eye = np.asarray(camera_config["eye"], dtype=np.float64)
    target = np.asarray(camera_config["target"], dtype=np.float64)
    return Camera.look_at(center + eye - target, center, fx=camera_config["fx"], fy=camera_config["fy"],
                          cx=camera_config["cx"], cy=camera_config["cy"])


def _generate_one(kind, index, seed, settings, skeleton):
    seq_seed = seed * 10007 + index
    seq = generate_sequence(kind, settings.duration_s, settings.fps, seq_seed, skeleton,
                            settings.d_thresh, settings.v_thresh)
    if settings.world_tilt_deg > 0:
        seq = transform_sequence(seq, random_tilt(settings.world_tilt_deg, seq_seed), skeleton=skeleton)
    obs = perturb_observations(seq, settings.noise_sigma, seq_seed + 1)
    if settings.project_2d:
        obs = project_to_camera(obs, _sequence_camera(seq, settings.camera))
    return seq, obs


def cmd_gen_data(args, config, run_log):
    """Writes <data-dir>/sequences and <data-dir>/observations, one pair per clip."""
    settings = generator_settings_from(config)
    skeleton = load_skeleton(settings.skeleton)
    seq_dir = os.path.join(args.data_dir, "sequences")
    obs_dir = os.path.join(args.data_dir, "observations")
    os.makedirs(seq_dir, exist_ok=True)
    os.makedirs(obs_dir, exist_ok=True)

    jobs = [(kind, i) for kind in settings.kinds for i in range(settings.per_kind)]
    sequences, files = [], []
    for index, (kind, i) in enumerate(tqdm(jobs, desc="Generating", unit="clip", disable=not _progress(config, args))):
        seq, obs = _generate_one(kind, index, args.seed, settings, skeleton)
        name = f"{kind}_{i:03d}.npz"
        save_sequence(os.path.join(seq_dir, name), seq)
        save_observations(os.path.join(obs_dir, name), obs)
        files += [os.path.join("sequences", name), os.path.join("observations", name)]
        sequences.append(seq)
        run_log.log_event(RunEventType.SEQUENCE, name=name, kind=kind, frames=seq.num_frames)

    buckets = stratify_by_hip_height(sequences) if sequences else {}
    counts = {label: len(members) for label, members in buckets.items()}
    print_success(f"Generated {len(sequences)} clips in {args.data_dir}")
    return files, {"bucket_counts": counts, "clips": len(sequences)}


def cmd_train(args, config, run_log):
    """Trains on every clip in <data-dir>/sequences; checkpoint and loss curve go to --output."""
    model_config = model_config_from(config)
    train_config = train_config_from(config, seed=args.seed)
    sequences = [load_sequence(p) for p in _npz_files(os.path.join(args.data_dir, "sequences"))]
    dataset = dataset_from_sequences(sequences, window=train_config.window, stride=train_config.stride)
    checkpoint_path = os.path.join(args.output, CHECKPOINT_NAME)

    start_epoch, optimizer_state, history = 0, None, []
    if args.resume:
        loaded = load_weights(checkpoint_path, expected_config=model_config)
        model, start_epoch, optimizer_state = loaded.model, loaded.epoch, loaded.optimizer_state
        curve_path = os.path.join(args.output, LOSS_CURVE_NAME)
        if os.path.exists(curve_path):
            with open(curve_path) as f:
                history = [row for row in json.load(f).get("epochs", []) if row["epoch"] < start_epoch]
        print_info(f"Resuming from epoch {start_epoch}")
    else:
        torch.manual_seed(args.seed)
        model = DualPriorModel(model_config)
    print_info(f"{dataset.size} training windows from {len(sequences)} clips")

    def on_epoch(row):
        run_log.log_event(RunEventType.EPOCH, **row)

    result = train(model, dataset, train_config, start_epoch=start_epoch, optimizer_state=optimizer_state,
                   on_epoch=on_epoch, progress=_progress(config, args))
    save_weights(checkpoint_path, model, epoch=result.epochs_completed, optimizer_state=result.optimizer_state,
                 train_config=train_config)
    with open(os.path.join(args.output, LOSS_CURVE_NAME), "w") as f:
        json.dump({"initial": result.initial_loss, "final": result.final_loss,
                   "epochs": history + result.loss_curve}, f, indent=2)
    print_success(f"Trained to epoch {result.epochs_completed}: loss {result.final_loss['total']:.5f}")
    return [CHECKPOINT_NAME, LOSS_CURVE_NAME], {"epochs": result.epochs_completed}


def _fit_planes(args, names):
    """Ground planes for the fixed-ground fit: from --gt-dir when given, z = 0 otherwise."""
    if not args.gt_dir:
        print_warning("No --gt-dir given; fitting against the plane z = 0.")
        return {name: GroundPlane.horizontal(0.0) for name in names}
    planes = {}
    for name in names:
        path = os.path.join(args.gt_dir, f"{name}.npz")
        if not os.path.exists(path):
            raise ConfigError(f"Missing ground-truth sequence for '{name}': {path}")
        planes[name] = load_sequence(path).plane
    return planes


def cmd_fit(args, config, run_log, with_ground=False):
    """Fits every observation file in --input; writes <name>.npz and <name>_report.json."""
    optim_config = optim_config_from(config, seed=args.seed)
    skeleton = load_skeleton(config["data"].get("skeleton"))
    model = load_weights(args.checkpoint).model
    paths = _npz_files(args.input)
    names = [_stem(p) for p in paths]
    planes = None if with_ground else _fit_planes(args, names)
    show_stage_bars = _progress(config, args) and args.jobs <= 1
    setting = "with_ground" if with_ground else "fixed_ground"

    def fit_one(path):
        name = _stem(path)

        def log_iteration(row):
            run_log.log_event(RunEventType.ITERATION, name=name, **row)

        obs = load_observations(path)
        if with_ground:
            seq, _, report = fit_with_ground(obs, model, optim_config, skeleton, progress=show_stage_bars,
                                             on_iteration=log_iteration)
        else:
            seq, report = fit_fixed_ground(obs, planes[name], model, optim_config, skeleton,
                                           progress=show_stage_bars, on_iteration=log_iteration)
        save_sequence(os.path.join(args.output, f"{name}.npz"), seq)
        with open(os.path.join(args.output, f"{name}_report.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        return name, report

    files = []
    reports = {}
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as executor:
        futures = {executor.submit(fit_one, path): path for path in paths}
        for future in tqdm(as_completed(futures), total=len(futures), desc="Fitting", unit="seq",
                           disable=not _progress(config, args)):
            name, report = future.result()
            reports[name] = report
            files += [f"{name}.npz", f"{name}_report.json"]
            for stage in report.stages:
                run_log.log_event(RunEventType.STAGE, name=name, stage=stage.name, iterations=stage.iterations,
                                  converged=stage.converged, final=stage.final)

    for name in sorted(reports):
        display_fit_report(name, reports[name])
    print_success(f"Fitted {len(reports)} sequences ({setting})")
    return files, {"setting": setting}


def cmd_eval(args, config, run_log):
    """Evaluates fitted sequences in --input against same-named clips in --gt-dir."""
    paths = _npz_files(args.input)
    preds, gts, names = [], [], []
    for path in paths:
        name = _stem(path)
        gt_path = os.path.join(args.gt_dir, f"{name}.npz")
        if not os.path.exists(gt_path):
            raise ConfigError(f"Missing ground-truth sequence for '{name}': {gt_path}")
        preds.append(load_sequence(path))
        gts.append(load_sequence(gt_path))
        names.append(name)
    report = evaluate(preds, gts, names=names, hardest_fraction=config["eval"]["hardest_fraction"])
    report.save(os.path.join(args.output, EVAL_REPORT_NAME))
    for row in report.sequences:
        run_log.log_event(RunEventType.SEQUENCE, **row)
    display_eval_report(report)
    return [EVAL_REPORT_NAME], {"overall": report.overall}


def cmd_sample(args, config, run_log):
    """Rolls the priors out from the first frame of a generated clip."""
    sample = config["sample"]
    skeleton = load_skeleton(config["data"].get("skeleton"))
    model = load_weights(args.checkpoint).model
    fps = float(config["data"]["fps"])
    files = []
    for i in range(int(sample["count"])):
        start = generate_sequence(sample["start_kind"], duration_s=1.0, fps=fps,
                                  seed=args.seed * 10007 + i, skeleton=skeleton)
        x0 = torch.as_tensor(start.states[0])
        result = rollout(model, x0, None, int(sample["frames"]), mode=sample["mode"],
                         seed=args.seed * 10007 + i, plane=start.plane)
        labels = contact_labels(interaction_vector(result.states, start.plane), skeleton,
                                config["contact"]["d_thresh"], config["contact"]["v_thresh"])
        seq = MotionSequence(
            fps=fps,
            states=result.states.numpy(),
            plane=start.plane,
            contacts=labels.numpy(),
            meta={"generator": "groundmotion.sample", "mode": sample["mode"], "seed": args.seed * 10007 + i,
                  "start_kind": sample["start_kind"]},
            bone_scale=skeleton.bone_scale,
            predicted_contacts=result.contact_probs.numpy(),
        )
        name = f"sample_{i:03d}.npz"
        save_sequence(os.path.join(args.output, name), seq)
        files.append(name)
        run_log.log_event(RunEventType.SEQUENCE, name=name, frames=seq.num_frames)
    print_success(f"Wrote {len(files)} rollouts of {sample['frames']} frames")
    return files, {"mode": sample["mode"]}


COMMANDS = {
    "gen-data": (cmd_gen_data, ("data_dir",)),
    "train": (cmd_train, ("data_dir", "output")),
    "fit": (cmd_fit, ("checkpoint", "input", "output")),
    "fit-ground": (lambda a, c, r: cmd_fit(a, c, r, with_ground=True), ("checkpoint", "input", "output")),
    "eval": (cmd_eval, ("input", "gt_dir", "output")),
    "sample": (cmd_sample, ("checkpoint", "output")),
}


def run(argv=None):
    """Parses arguments, runs one command and returns the process exit code."""
    parser = create_parser()
    args = parser.parse_args(argv)
    set_quiet(args.quiet)
    run_log = None
    try:
        config = load_config(args.config)
        configure_logging(config, verbose=args.verbose, quiet=args.quiet)
        torch.set_num_threads(int(config["runtime"].get("threads", 1)))

        command, required = COMMANDS[args.mode]
        _require(args, *required)
        output_dir = args.data_dir if args.mode == "gen-data" else args.output
        os.makedirs(output_dir, exist_ok=True)
        run_log = RunLogger(output_dir, args.mode)
        run_log.log_event(RunEventType.RUN_START, seed=args.seed, argv=sys.argv[1:] if argv is None else list(argv))

        print_header(f"groundmotion {args.mode}")
        files, extra = command(args, config, run_log)
        write_manifest(output_dir, args.mode, args.seed, config, files, extra)
        run_log.log_event(RunEventType.RUN_END, files=len(files))
        return EXIT_OK

    except KeyboardInterrupt:
        print_info("Interrupted by user. Exiting...")
        return exit_code_for(KeyboardInterrupt())
    except GroundMotionError as e:
        print_error(str(e))
        if run_log:
            run_log.log_event(RunEventType.ERROR, error=type(e).__name__, message=str(e))
        return exit_code_for(e)
    except Exception as e:
        print_error(f"A critical error occurred: {e}")
        if os.environ.get("GROUNDMOTION_DEBUG"):
            traceback.print_exc()
        if run_log:
            run_log.log_event(RunEventType.ERROR, error=type(e).__name__, message=str(e))
        return exit_code_for(e)
    finally:
        if run_log:
            run_log.close()


def main():
    """Main function to orchestrate the process."""
    sys.exit(run())


if __name__ == "__main__":
    main()
