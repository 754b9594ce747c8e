"""End-to-end stages: denoise -> scan-convert -> match -> register -> composite."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .denoise.train import denoise_image
from .errors import InsufficientData, RegistrationFailure
from .geometry import PolarFrame, polar_to_cartesian
from .ingest import FrameSequence
from .matching import MatchConfig, match_pair, match_pair_symmetric
from .mosaic import BlendConfig, compute_canvas, composite
from .refine import RefineConfig, feature_guided_block
from .register import EdgeResult, RansacConfig, chain_trajectory, estimate_rigid

logger = logging.getLogger(__name__)


def ordered_map(fn, items, threads=1):
    """Map in a worker pool; results keep input order so outputs never depend on threads."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def default_sequence_match():
    # Same 24-px descriptor as MatchConfig(), on a denser 4-px grid: more and
    # better-spread correspondences per edge, which is what keeps chained
    # rotation drift down.
    return MatchConfig(coarse_cell=4, descriptor_scale=6)


@dataclass
class MosaicConfig:
    meters_per_pixel: float = 0.01
    match: MatchConfig = field(default_factory=default_sequence_match)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    symmetric: bool = True


@dataclass
class MosaicResult:
    cartesian: list
    matches: list
    edges: list
    trajectory: object
    canvas: object
    panorama: object

    @property
    def failed_edges(self):
        return sum(1 for e in self.edges if not isinstance(e, EdgeResult))


def denoise_sequence(sequence, model, refine=None, threads=1):
    """First-stage network output refined by the feature-guided block, per frame."""
    refine = refine or RefineConfig()

    def one(frame):
        first = denoise_image(model, frame.data)
        return PolarFrame(frame.geometry, frame.timestamp_us, feature_guided_block(frame.data, first, refine))

    return FrameSequence(sequence.geometry, ordered_map(one, sequence.frames, threads))


def register_frames(cartesian, match_cfg=None, ransac_cfg=None, threads=1, symmetric=True, provided=None):
    """Match and register each consecutive pair; returns (matches, edge results).

    ``provided`` optionally maps an edge index k to an externally computed
    MatchSet (frame k points on side A, frame k-1 on side B) used instead of
    the built-in matcher.
    """
    match_cfg = match_cfg or MatchConfig()
    ransac_cfg = ransac_cfg or RansacConfig()
    matcher = match_pair_symmetric if symmetric else match_pair
    provided = provided or {}

    def edge(k):
        # Frame k is side A and frame k-1 side B, so the pose maps k into k-1.
        matches = provided.get(k)
        if matches is None:
            matches = matcher(cartesian[k], cartesian[k - 1], match_cfg, frame_ids=(str(k), str(k - 1)))
        try:
            pose, inliers, rms = estimate_rigid(matches, ransac_cfg)
        except (InsufficientData, RegistrationFailure) as exc:
            logger.warning("edge %d->%d skipped: %s", k, k - 1, exc)
            return matches, exc
        return matches, EdgeResult(pose, int(inliers.sum()), rms)

    results = ordered_map(edge, range(1, len(cartesian)), threads)
    return [m for m, _ in results], [e for _, e in results]


def mosaic_sequence(sequence, cfg=None, threads=1, provided_matches=None):
    """Scan-convert, register consecutive frames, chain and composite."""
    cfg = cfg or MosaicConfig()
    frames = getattr(sequence, "frames", sequence)
    if not frames:
        raise InsufficientData("no frames to mosaic")
    cartesian = ordered_map(lambda f: polar_to_cartesian(f, cfg.meters_per_pixel), frames, threads)
    matches, edges = register_frames(cartesian, cfg.match, cfg.ransac, threads, cfg.symmetric,
                                     provided_matches)
    trajectory = chain_trajectory(edges)
    canvas = compute_canvas(trajectory, frames[0].geometry, cfg.meters_per_pixel)
    panorama = composite(cartesian, trajectory, cfg.blend, canvas)
    return MosaicResult(cartesian, matches, edges, trajectory, canvas, panorama)


class SonarMosaicker(BaseEstimator):
    """Estimator facade over :func:`mosaic_sequence`.

    ``fit`` takes a FrameSequence (or list of PolarFrame) and sets
    ``trajectory_``, ``matches_``, ``panorama_`` and ``canvas_``.
    """

    def __init__(self, meters_per_pixel=0.01, coarse_cell=4, descriptor_scale=6, min_score=0.35,
                 fine_search_radius=4, symmetric=True, ransac_iterations=1000,
                 inlier_threshold_px=2.0, min_inliers=10, model="rigid", feather=True,
                 gain_compensation=True, random_state=0, n_jobs=1):
        self.meters_per_pixel = meters_per_pixel
        self.coarse_cell = coarse_cell
        self.descriptor_scale = descriptor_scale
        self.min_score = min_score
        self.fine_search_radius = fine_search_radius
        self.symmetric = symmetric
        self.ransac_iterations = ransac_iterations
        self.inlier_threshold_px = inlier_threshold_px
        self.min_inliers = min_inliers
        self.model = model
        self.feather = feather
        self.gain_compensation = gain_compensation
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self):
        return MosaicConfig(
            meters_per_pixel=self.meters_per_pixel,
            match=MatchConfig(coarse_cell=self.coarse_cell, descriptor_scale=self.descriptor_scale,
                              min_score=self.min_score, fine_search_radius=self.fine_search_radius),
            ransac=RansacConfig(self.ransac_iterations, self.inlier_threshold_px, self.min_inliers,
                                self.random_state, self.model),
            blend=BlendConfig(self.feather, self.gain_compensation),
            symmetric=self.symmetric,
        )

    def fit(self, X, y=None):
        result = mosaic_sequence(X, self._config(), self.n_jobs)
        self.result_ = result
        self.trajectory_ = result.trajectory
        self.matches_ = result.matches
        self.canvas_ = result.canvas
        self.panorama_ = result.panorama
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).panorama_.pixels

    @property
    def n_failed_edges_(self):
        check_is_fitted(self, "result_")
        return self.result_.failed_edges
