"""Command-line front end.

Every subcommand takes an INI config (``--config``) whose values are
overridden by flags, writes ``effective_config.ini`` and ``run.log`` into
``--output-dir``, and on failure prints ``error: <category>: <message>`` to
stderr and exits with status 2.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .denoise import TrainConfig, load_model, save_history, save_model, train
from .errors import EmptyInput, InvalidArgument, RegistrationFailure, SonarError
from .geometry import SensorGeometry, polar_to_cartesian
from .ingest import import_image_sequence, read_container, save_png16, write_container
from .matching import MatchConfig, load_matches, save_matches
from .metrics import EvalReport, psnr, ssim, trajectory_error
from .mosaic import BlendConfig, read_panorama_png, write_coverage_png, write_panorama_png
from .pipeline import MosaicConfig, denoise_sequence, mosaic_sequence
from .refine import RefineConfig
from .register import EdgeResult, RansacConfig, Trajectory, load_trajectory, save_trajectory
from .synth import (
    NoiseParams,
    Scene,
    make_dataset,
    make_scene,
    pixel_trajectory,
    render_scene_canvas,
    scene_for_sweep,
    sweep_trajectory,
)

logger = logging.getLogger("sonarkit")

_G = SensorGeometry()
DEFAULTS = {
    "run": {"seed": "0", "threads": str(os.cpu_count() or 1)},
    "sensor": {
        "range_min_m": str(_G.range_min_m), "range_max_m": str(_G.range_max_m),
        "fov_deg": str(_G.fov_deg), "beam_count": str(_G.beam_count),
        "sample_count": str(_G.sample_count), "frame_rate_hz": str(_G.frame_rate_hz),
    },
    "synth": {
        "frames": "30", "step_m": "0.05", "jitter_deg": "0.2", "speckle_looks": "4.0",
        "additive_sigma": "0.02", "range_attenuation": "0.0", "particle_density": "15.0",
        "depression_density": "8.0",
    },
    "train": {"gamma": "1.0", "learning_rate": "0.001", "epochs": "50", "batch_size": "4", "gamma_ramp": "false"},
    "refine": {"radius": "4", "eps": "0.0001", "saliency_blend": "true"},
    "match": {
        "coarse_cell": "4", "descriptor_scale": "6", "min_score": "0.35", "fine_search_radius": "4",
        "max_matches": "1000", "symmetric": "true",
    },
    "ransac": {"iterations": "1000", "inlier_threshold_px": "2.0", "min_inliers": "10", "model": "rigid"},
    "mosaic": {"meters_per_pixel": "0.01", "feather": "true", "gain_compensation": "true"},
}

# flag dest -> (section, key)
OVERRIDES = {
    "seed": ("run", "seed"), "threads": ("run", "threads"), "frames": ("synth", "frames"),
    "gamma": ("train", "gamma"), "epochs": ("train", "epochs"),
    "radius": ("refine", "radius"), "eps": ("refine", "eps"),
    "ransac_iters": ("ransac", "iterations"), "inlier_px": ("ransac", "inlier_threshold_px"),
    "mpp": ("mosaic", "meters_per_pixel"),
}


class Settings:
    """Typed view over the merged configuration."""

    def __init__(self, parser):
        self.cp = parser

    def _get(self, section, key, conv):
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise InvalidArgument(f"[{section}] {key} = {raw!r}: {exc}") from None

    def int(self, section, key):
        return self._get(section, key, int)

    def float(self, section, key):
        return self._get(section, key, float)

    def bool(self, section, key):
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise InvalidArgument(f"[{section}] {key} must be a boolean") from None

    @property
    def seed(self):
        return self.int("run", "seed")

    @property
    def threads(self):
        return max(1, self.int("run", "threads"))

    def validate(self):
        """Parse every value now so a bad entry fails before any work starts."""
        self.int("synth", "frames")
        for key in ("particle_density", "depression_density", "step_m", "jitter_deg"):
            self.float("synth", key)
        self.geometry(), self.noise(), self.train_config(), self.refine_config(), self.mosaic_config()
        self.seed, self.threads

    def geometry(self):
        s = "sensor"
        return SensorGeometry(
            self.float(s, "range_min_m"), self.float(s, "range_max_m"), self.float(s, "fov_deg"),
            self.int(s, "beam_count"), self.int(s, "sample_count"), self.float(s, "frame_rate_hz"),
        )

    def noise(self):
        return NoiseParams(self.float("synth", "speckle_looks"), self.float("synth", "additive_sigma"),
                           self.float("synth", "range_attenuation"))

    def train_config(self):
        return TrainConfig(
            gamma=self.float("train", "gamma"), learning_rate=self.float("train", "learning_rate"),
            epochs=self.int("train", "epochs"), batch_size=self.int("train", "batch_size"),
            gamma_ramp=self.bool("train", "gamma_ramp"), seed=self.seed,
        )

    def refine_config(self):
        return RefineConfig(self.int("refine", "radius"), self.float("refine", "eps"),
                            self.bool("refine", "saliency_blend"))

    def mosaic_config(self):
        m = "match"
        return MosaicConfig(
            meters_per_pixel=self.float("mosaic", "meters_per_pixel"),
            match=MatchConfig(self.int(m, "coarse_cell"), self.int(m, "descriptor_scale"),
                              self.float(m, "min_score"), self.int(m, "fine_search_radius"),
                              self.int(m, "max_matches")),
            ransac=RansacConfig(self.int("ransac", "iterations"), self.float("ransac", "inlier_threshold_px"),
                                self.int("ransac", "min_inliers"), self.seed, self.cp.get("ransac", "model")),
            blend=BlendConfig(self.bool("mosaic", "feather"), self.bool("mosaic", "gain_compensation")),
            symmetric=self.bool(m, "symmetric"),
        )


def load_settings(args):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if args.config is not None:
        user = configparser.ConfigParser(interpolation=None)
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user.read(path)
        except configparser.Error as exc:
            raise InvalidArgument(f"{path}: {exc}") from None
        for section in user.sections():
            if section not in DEFAULTS:
                raise InvalidArgument(f"{path}: unknown section [{section}]")
            for key, value in user.items(section):
                if key not in DEFAULTS[section]:
                    raise InvalidArgument(f"{path}: unknown key '{key}' in [{section}]")
                cp.set(section, key, value)
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            cp.set(section, key, str(value))
    settings = Settings(cp)
    settings.validate()
    return settings


def _setup_output(args, settings):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "effective_config.ini", "w") as fh:
        settings.cp.write(fh)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    torch.set_num_threads(settings.threads)
    logger.info("sonarkit %s %s seed=%d threads=%d", __version__, args.command, settings.seed, settings.threads)
    return out, handler


def _read_frames(path, settings):
    path = Path(path)
    if path.is_dir():
        return import_image_sequence(path, settings.geometry())
    return read_container(path)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, settings, out):
    g = settings.geometry()
    n = settings.int("synth", "frames")
    if n < 1:
        raise InvalidArgument("synth needs at least one frame")
    step = settings.float("synth", "step_m")
    width, height, start = scene_for_sweep(n, step, g)
    scene = make_scene(width, height, particle_density=settings.float("synth", "particle_density"),
                       depression_density=settings.float("synth", "depression_density"), seed=settings.seed)
    poses = sweep_trajectory(n, start, step, settings.float("synth", "jitter_deg"), seed=settings.seed)
    noisy, clean, poses = make_dataset(scene, poses, g, settings.noise(), seed=settings.seed)
    write_container(out / "noisy.sonr", noisy)
    write_container(out / "clean.sonr", clean)
    truth = Trajectory(poses, [True] * n, [0] * n, [0.0] * n)
    save_trajectory(out / "ground_truth.txt", truth)
    np.savez(out / "scene.npz", reflectivity=scene.reflectivity, meters_per_cell=scene.meters_per_cell)
    logger.info("wrote %d frames of a %.2f x %.2f m scene", n, width, height)


def _train(frames, settings):
    t0 = time.perf_counter()
    model, history = train(frames, settings.train_config())
    logger.info("trained %d epochs in %.1f s", len(history), time.perf_counter() - t0)
    return model, history


def cmd_train(args, settings, out):
    frames = _read_frames(args.input, settings)
    if len(frames) == 0:
        raise EmptyInput("no frames to train on")
    model, history = _train(frames, settings)
    save_model(out / "model.sndm", model)
    save_history(out / "loss_history.csv", history)


def _denoise(frames, model, settings):
    return denoise_sequence(frames, model, settings.refine_config(), settings.threads)


def cmd_denoise(args, settings, out):
    frames = _read_frames(args.input, settings)
    denoised = _denoise(frames, load_model(args.model), settings)
    write_container(out / "denoised.sonr", denoised)
    if args.png:
        (out / "frames").mkdir(exist_ok=True)
        for k, f in enumerate(denoised):
            save_png16(out / "frames" / f"frame_{k:04d}.png", f.data)


def _edge_name(k):
    return f"matches_{k:04d}_{k - 1:04d}.txt"


def _mosaic(frames, settings, provided=None):
    if len(frames) == 0:
        raise EmptyInput("no frames to mosaic")
    cfg = settings.mosaic_config()
    t0 = time.perf_counter()
    result = mosaic_sequence(frames, cfg, settings.threads, provided)
    n_edges = len(result.edges)
    logger.info("mosaic of %d frames in %.1f s, %d/%d edges registered",
                len(frames), time.perf_counter() - t0, n_edges - result.failed_edges, n_edges)
    for k, edge in enumerate(result.edges, start=1):
        if isinstance(edge, EdgeResult):
            logger.info("edge %d->%d: %d inliers, rms %.3f px", k, k - 1, edge.inliers, edge.rms)
    if n_edges and result.failed_edges == n_edges:
        raise RegistrationFailure(f"all {n_edges} edges failed to register")
    return result, cfg


def cmd_mosaic(args, settings, out):
    frames = _read_frames(args.input, settings)
    provided = {}
    if args.matches_dir is not None:
        for k in range(1, len(frames)):
            path = Path(args.matches_dir) / _edge_name(k)
            if path.is_file():
                provided[k] = load_matches(path)
        logger.info("using %d external match files", len(provided))
    result, cfg = _mosaic(frames, settings, provided)
    save_trajectory(out / "trajectory.txt", result.trajectory)
    write_panorama_png(out / "panorama.png", result.panorama, cfg.meters_per_pixel)
    write_coverage_png(out / "coverage.png", result.panorama)
    (out / "matches").mkdir(exist_ok=True)
    for k, m in enumerate(result.matches, start=1):
        save_matches(out / "matches" / _edge_name(k), m)


def cmd_pipeline(args, settings, out):
    frames = _read_frames(args.input, settings)
    if len(frames) == 0:
        raise EmptyInput("no frames in input")
    if args.model is not None:
        model = load_model(args.model)
    else:
        logger.info("no --model given; training on the input frames")
        model, _ = _train(frames, settings)
        if args.save_model is not None:
            save_model(args.save_model, model)
    denoised = _denoise(frames, model, settings)
    write_container(out / "denoised.sonr", denoised)
    result, cfg = _mosaic(denoised, settings)
    save_trajectory(out / "trajectory.txt", result.trajectory)
    write_panorama_png(out / "panorama.png", result.panorama, cfg.meters_per_pixel)


def _eval_frames(report, truth_dir, run_dir):
    clean_path, denoised_path = truth_dir / "clean.sonr", run_dir / "denoised.sonr"
    if not (clean_path.is_file() and denoised_path.is_file()):
        return None
    clean, denoised = read_container(clean_path), read_container(denoised_path)
    if len(clean) != len(denoised):
        raise InvalidArgument(f"{len(denoised)} denoised frames but {len(clean)} clean frames")
    for c, d in zip(clean, denoised):
        report.frame_psnr.append(psnr(d.data, c.data))
        report.frame_ssim.append(ssim(d.data, c.data))
    noisy_path = truth_dir / "noisy.sonr"
    if noisy_path.is_file():
        noisy = read_container(noisy_path)
        report.extra["median_noisy_psnr_db"] = float(np.median([psnr(n.data, c.data) for n, c in zip(noisy, clean)]))
    return clean.geometry


def cmd_eval(args, settings, out):
    run_dir, truth_dir = Path(args.run_dir), Path(args.truth_dir)
    for d in (run_dir, truth_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    report = EvalReport()
    geometry = _eval_frames(report, truth_dir, run_dir) or settings.geometry()

    pano_path = run_dir / "panorama.png"
    mpp = settings.float("mosaic", "meters_per_pixel")
    pano = None
    if pano_path.is_file():
        pixels, offset, stored_mpp = read_panorama_png(pano_path)
        mpp = stored_mpp or mpp
        pano = (pixels, offset)

    traj_path, gt_path = run_dir / "trajectory.txt", truth_dir / "ground_truth.txt"
    world = None
    if traj_path.is_file() and gt_path.is_file():
        est, world = load_trajectory(traj_path), load_trajectory(gt_path).poses
        if len(est) != len(world):
            raise InvalidArgument(f"trajectory has {len(est)} poses, ground truth {len(world)}")
        gt = pixel_trajectory(world, geometry, mpp)
        report.translation_rmse_px, report.rotation_rmse_deg = trajectory_error(est.poses, gt)
        report.extra["anchored_frames"] = sum(est.anchored)
        match_dir = run_dir / "matches"
        for k in range(1, len(est)):
            path = match_dir / _edge_name(k)
            if path.is_file():
                n = len(load_matches(path))
                report.inlier_ratios.append(est.inliers[k] / n if n else 0.0)

    scene_path = truth_dir / "scene.npz"
    if pano is not None and world is not None and scene_path.is_file():
        with np.load(scene_path) as data:
            scene = Scene(data["reflectivity"], float(data["meters_per_cell"]))
        pixels, offset = pano
        covered = pixels > 0
        ref = render_scene_canvas(scene, world[0], geometry, mpp, pixels.shape, offset)
        report.extra["panorama_psnr_db"] = psnr(pixels, ref, covered)
        noisy_path = truth_dir / "noisy.sonr"
        if noisy_path.is_file():
            noisy0 = polar_to_cartesian(read_container(noisy_path)[0], mpp)
            clean0 = polar_to_cartesian(read_container(truth_dir / "clean.sonr")[0], mpp)
            report.extra["single_frame_psnr_db"] = psnr(noisy0.pixels, clean0.pixels, noisy0.mask)
    report.write(out / "report.txt", out / "frames.csv")
    for key, value in report.summary().items():
        logger.info("%s=%s", key, value)


# -- argument parsing ----------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--output-dir", required=True, help="directory for all outputs")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")


def build_parser():
    parser = argparse.ArgumentParser(prog="sonarkit", description="Sonar denoising and mosaicking toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="also log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sweep with ground truth")
    _common(p)
    p.add_argument("--frames", type=int, help="number of frames (default 30)")

    p = sub.add_parser("train", help="train the denoiser on noisy frames")
    _common(p)
    p.add_argument("input", help="SONR file or directory of PNG/PGM frames")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("denoise", help="apply a checkpoint and the feature-guided block")
    _common(p)
    p.add_argument("input")
    p.add_argument("--model", required=True, help="SNDM checkpoint")
    p.add_argument("--radius", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--png", action="store_true", help="also write 16-bit PNG per frame")

    p = sub.add_parser("mosaic", help="register frames and composite a panorama")
    _common(p)
    p.add_argument("input")
    p.add_argument("--ransac-iters", type=int)
    p.add_argument("--inlier-px", type=float)
    p.add_argument("--mpp", type=float, help="panorama metres per pixel")
    p.add_argument("--matches-dir", help="directory of external match files to use per edge")

    p = sub.add_parser("pipeline", help="denoise then mosaic in one run")
    _common(p)
    p.add_argument("input")
    p.add_argument("--model", help="SNDM checkpoint; trains on the input when omitted")
    p.add_argument("--save-model", help="where to store the model trained in this run")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--ransac-iters", type=int)
    p.add_argument("--inlier-px", type=float)
    p.add_argument("--mpp", type=float)

    p = sub.add_parser("eval", help="score a run against synthetic ground truth")
    _common(p)
    p.add_argument("--run-dir", required=True, help="output directory of pipeline or mosaic/denoise")
    p.add_argument("--truth-dir", required=True, help="output directory of synth")
    p.add_argument("--mpp", type=float, help="fallback scale when the panorama carries none")
    return parser


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "denoise": cmd_denoise,
    "mosaic": cmd_mosaic, "pipeline": cmd_pipeline, "eval": cmd_eval,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setLevel(logging.INFO if args.verbose else logging.WARNING)
    stderr.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.addHandler(stderr)
    logger.setLevel(logging.INFO)
    file_handler = None
    try:
        settings = load_settings(args)
        out, file_handler = _setup_output(args, settings)
        COMMANDS[args.command](args, settings, out)
        return 0
    except SonarError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        logger.debug("failure", exc_info=True)
        return 2
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 2
    finally:
        for handler in (stderr, file_handler):
            if handler is not None:
                logger.removeHandler(handler)
                handler.close()


if __name__ == "__main__":
    sys.exit(main())
