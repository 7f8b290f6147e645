"""
Sequence files
==============
Motion and observation clips are stored as `.npz` archives of named float64
arrays plus a `header` entry: a JSON document saved as a 0-d unicode array.

Header keys: magic, version, content ("motion" | "observation"), joint_count,
fps, bone_scale, noise_sigma, meta.

Motion arrays:       states (T, 207), contacts (T, 9), plane (4,)
                     [predicted_contacts (T, 9)]
Observation arrays:  joints_3d (T, 22, 3)
                     [joints_2d (T, 22, 2), camera_intrinsics (4,),
                      camera_rotation (3, 3), camera_translation (3,)]
"""

import json
import zipfile
import logging

import numpy as np
import torch

from ..core.errors import DimensionError, SequenceFormatError, SequenceVersionError, TruncatedFileError
from ..body.ground import GroundPlane
from ..body.skeleton import DTYPE, STATE_LAYOUT
from .synth import Camera, MotionSequence, ObservationSequence

logger = logging.getLogger(__name__)

MAGIC = "groundmotion-seq"
FORMAT_VERSION = 1


def _write(path, header, arrays):
    header = {"magic": MAGIC, "version": FORMAT_VERSION, "joint_count": STATE_LAYOUT.joint_count, **header}
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    logger.debug("wrote %s (%s)", path, header.get("content"))


def save_sequence(path, seq: MotionSequence):
    arrays = {
        "states": np.asarray(seq.states, dtype=np.float64),
        "contacts": np.asarray(seq.contacts, dtype=np.int8),
        "plane": seq.plane.raw.detach().numpy().astype(np.float64),
    }
    if seq.predicted_contacts is not None:
        arrays["predicted_contacts"] = np.asarray(seq.predicted_contacts, dtype=np.float64)
    _write(path, {"content": "motion", "fps": seq.fps, "bone_scale": seq.bone_scale, "meta": seq.meta}, arrays)


def save_observations(path, obs: ObservationSequence):
    arrays = {"joints_3d": np.asarray(obs.joints_3d, dtype=np.float64)}
    if obs.has_2d:
        arrays.update(
            joints_2d=obs.joints_2d,
            camera_intrinsics=obs.camera.intrinsics,
            camera_rotation=obs.camera.rotation,
            camera_translation=obs.camera.translation,
        )
    _write(path, {"content": "observation", "fps": obs.fps, "noise_sigma": obs.noise_sigma, "meta": obs.meta}, arrays)


def _open(path, content):
    """Reads and validates the header; returns (header, arrays dict)."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (zipfile.BadZipFile, EOFError) as e:
        raise TruncatedFileError(f"'{path}' is truncated or damaged: {e}") from e
    except (ValueError, OSError) as e:
        raise SequenceFormatError(f"'{path}' is not a sequence archive: {e}") from e
    if not isinstance(arrays, dict) or "header" not in arrays:
        raise SequenceFormatError(f"'{path}' has no header.")

    try:
        header = json.loads(str(arrays.pop("header")))
    except json.JSONDecodeError as e:
        raise SequenceFormatError(f"'{path}' has an unreadable header: {e}") from e
    if header.get("magic") != MAGIC:
        raise SequenceFormatError(f"'{path}' has bad magic {header.get('magic')!r}.")
    if header.get("version") != FORMAT_VERSION:
        raise SequenceVersionError(f"'{path}' is format version {header.get('version')}, expected {FORMAT_VERSION}.")
    if header.get("content") != content:
        raise SequenceFormatError(f"'{path}' holds {header.get('content')!r} data, expected {content!r}.")
    if header.get("joint_count") != STATE_LAYOUT.joint_count:
        raise DimensionError(f"'{path}' has joint_count {header.get('joint_count')}, expected {STATE_LAYOUT.joint_count}.")
    return header, arrays


def _require(path, arrays, names):
    missing = [n for n in names if n not in arrays]
    if missing:
        raise TruncatedFileError(f"'{path}' is missing arrays: {', '.join(missing)}")


def load_sequence(path) -> MotionSequence:
    header, arrays = _open(path, "motion")
    _require(path, arrays, ("states", "contacts", "plane"))
    states = arrays["states"]
    if states.ndim != 2 or states.shape[1] != STATE_LAYOUT.dim:
        raise DimensionError(f"'{path}' states have shape {states.shape}, expected (T, {STATE_LAYOUT.dim}).")
    plane = torch.as_tensor(arrays["plane"], dtype=DTYPE)
    return MotionSequence(
        fps=float(header["fps"]),
        states=states,
        plane=GroundPlane(normal=plane[:3], offset=plane[3]),
        contacts=arrays["contacts"],
        meta=header.get("meta", {}),
        bone_scale=float(header.get("bone_scale", 1.0)),
        predicted_contacts=arrays.get("predicted_contacts"),
    )


def load_observations(path) -> ObservationSequence:
    header, arrays = _open(path, "observation")
    _require(path, arrays, ("joints_3d",))
    camera = None
    if "joints_2d" in arrays:
        _require(path, arrays, ("camera_intrinsics", "camera_rotation", "camera_translation"))
        fx, fy, cx, cy = (float(v) for v in arrays["camera_intrinsics"])
        camera = Camera(fx, fy, cx, cy, arrays["camera_rotation"], arrays["camera_translation"])
    return ObservationSequence(
        fps=float(header["fps"]),
        joints_3d=arrays["joints_3d"],
        joints_2d=arrays.get("joints_2d"),
        camera=camera,
        noise_sigma=float(header.get("noise_sigma", 0.0)),
        meta=header.get("meta", {}),
    )
