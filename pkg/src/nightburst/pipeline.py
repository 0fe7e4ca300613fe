"""Full-pipeline orchestration: meter, align, merge, white balance, finish."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import burst_align, burst_merge, motion_metering, tonemap
from .awb import calibration as awb_calibration
from .awb import model as awb_model
from .awb.features import make_thumbnail
from .errors import InputError, StageError
from .raw_model import (
    LinearImage,
    NoiseModel,
    green_plane,
    load_burst,
    load_manifest,
    load_weight_map,
    normalize,
    pyr_down,
)

REPORT_VERSION = 1


@dataclass
class PipelineConfig:
    metering: motion_metering.MeteringParams = field(
        default_factory=motion_metering.MeteringParams)
    align: burst_align.AlignParams = field(default_factory=burst_align.AlignParams)
    merge: burst_merge.MergeParams = field(default_factory=burst_merge.MergeParams)
    tone: tonemap.ToneParams = field(default_factory=tonemap.ToneParams)
    finish_options: tonemap.FinishOptions = field(default_factory=tonemap.FinishOptions)
    target_sensitivity: float = 1.0
    lux_calibration: float = 60.0
    awb_model_path: str | None = None
    calibration_path: str | None = None
    run_spatial_denoise: bool = True
    threads: int = 4

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        """Build a config from nested JSON, rejecting unknown keys."""
        sections = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            if key not in sections:
                raise InputError(f"unknown config key {key!r}")
            f = sections[key]
            if dataclasses.is_dataclass(f.default_factory() if f.default_factory
                                        is not dataclasses.MISSING else None):
                section_cls = type(f.default_factory())
                valid = {sf.name for sf in dataclasses.fields(section_cls)}
                bad = set(value) - valid
                if bad:
                    raise InputError(f"unknown config key {key}.{sorted(bad)[0]}")
                value = section_cls(**{
                    k: tuple(v) if isinstance(v, list) else v
                    for k, v in value.items()
                })
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _scale_variance(noise: NoiseModel, factor: float) -> NoiseModel:
    return NoiseModel(noise.slope * factor, noise.intercept * factor, noise.ref_gain)


def metering_images(manifest, frames, max_width: int = 320):
    """Green-plane metering stream, exposure-normalized and downsampled.

    Returns (images, noise) where noise approximates the per-pixel variance
    at the final scale (green averaging halves it; each pyramid level keeps
    roughly 7.5% of white-noise variance).
    """
    ref_sens = frames[0].sensitivity
    images = []
    var_factor = 0.5
    for fr in frames:
        lin = normalize(fr, relative_to_sensitivity=ref_sens)
        g = green_plane(lin.samples, fr.cfa)
        factor = 0.5
        while g.shape[1] > max_width:
            g = pyr_down(g)
            factor *= 0.075
        images.append(LinearImage(g))
        var_factor = factor
    noise = _scale_variance(manifest.noise.at_gain(frames[0].gain), var_factor)
    return images, noise


def run_metering(manifest, frames, params: motion_metering.MeteringParams,
                 weight_map=None):
    """Motion samples for each successive metering-frame pair, then a plan."""
    images, noise = metering_images(manifest, frames)
    weights = None
    if weight_map is not None:
        weights = ndimage.zoom(
            weight_map,
            (params.field_rows / weight_map.shape[0],
             params.field_cols / weight_map.shape[1]),
            order=1, grid_mode=True, mode="nearest")
    samples = []
    for prev, curr in zip(images, images[1:]):
        fld = motion_metering.bounded_flow(prev, curr, noise, params)
        refined = motion_metering.refine_field(fld, params.field_rows, params.field_cols)
        samples.append(motion_metering.weighted_average(refined, weights))
    samples = samples[-params.history_len_n:]
    usable = [s.value for s in samples if not s.no_signal]
    gmm = motion_metering.fit_gmm(usable, params) if usable else None
    return samples, gmm


def _gray_world(rgb: np.ndarray) -> awb_model.IlluminantEstimate:
    mean = np.maximum(rgb.reshape(-1, 3).mean(axis=0), 1e-6)
    return awb_model.IlluminantEstimate(rgb=mean / mean[1])


def run_pipeline(
    burst_manifest_path: str,
    config: PipelineConfig | None = None,
    metering_manifest_path: str | None = None,
    out_png: str | None = None,
    report_path: str | None = None,
    include_timing: bool = True,
):
    """Execute the stages in capture order; returns (srgb_uint8, report).

    Any stage failure is re-raised as `StageError` naming the stage. With
    `include_timing=False` the report is byte-stable across runs.
    """
    config = config or PipelineConfig()
    report: dict = {"version": REPORT_VERSION}
    timings: dict = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as e:  # noqa: BLE001 - re-tag with the stage name
            raise StageError(name, e) from e
        timings[name] = round((time.perf_counter() - t0) * 1e3, 3)
        return result

    manifest, frames = stage("load", lambda: load_burst(burst_manifest_path))
    gain = frames[0].gain
    noise_at_gain = manifest.noise.at_gain(gain)

    def do_meter():
        if metering_manifest_path is None:
            return motion_metering.CapturePlan(
                exposure_time=frames[0].exposure_time,
                gain=gain,
                frame_count=len(frames),
                stabilized=False,
                predicted_v_min=0.0,
            )
        m_manifest, m_frames = load_burst(metering_manifest_path)
        weight_map = load_weight_map(m_manifest)
        _, gmm = run_metering(m_manifest, m_frames, config.metering, weight_map)
        return motion_metering.plan_capture(
            gmm, m_manifest.gyro, config.target_sensitivity, config.metering)

    plan = stage("meter", do_meter)
    report["capture_plan"] = {
        "exposure_time_s": plan.exposure_time,
        "gain": plan.gain,
        "frame_count": plan.frame_count,
        "stabilized": plan.stabilized,
        "predicted_v_min_px": plan.predicted_v_min,
    }

    def do_align():
        linear = [normalize(fr) for fr in frames]
        pool = min(config.metering.reference_pool_k, len(frames))
        ref = burst_align.select_reference(linear, manifest.cfa, pool)
        alignment = burst_align.align_burst(
            linear, manifest.cfa, ref, noise_at_gain, config.align)
        return linear, ref, alignment

    linear, ref, alignment = stage("align", do_align)
    report["reference_index"] = ref.index

    def do_merge():
        mm = burst_merge.mismatch_maps(alignment, noise_at_gain, config.merge)
        merged = burst_merge.merge_fourier(
            linear, manifest.cfa, alignment, mm, noise_at_gain, config.merge)
        if config.run_spatial_denoise:
            merged = burst_merge.spatial_denoise(merged, noise_at_gain, config.merge)
        return mm, merged

    mm, merged = stage("merge", do_merge)
    n = len(frames)
    report["frame_mean_mismatch"] = [
        float(mm.values[z].mean()) if z != alignment.ref_index else 0.0
        for z in range(n)
    ]
    hist_counts, hist_edges = np.histogram(merged.n_eff, bins=min(8, n),
                                           range=(1.0, float(n)))
    report["n_eff_histogram"] = {
        "edges": [float(e) for e in hist_edges],
        "counts": [int(c) for c in hist_counts],
    }

    def do_awb():
        rgb = tonemap.demosaic_bilinear(merged.mosaic(), merged.cfa)
        thumb = make_thumbnail(np.clip(rgb, 0.0, None))
        if config.awb_model_path:
            model = awb_model.load_model(config.awb_model_path)
            cmap = (awb_calibration.load_calibration(config.calibration_path)
                    if config.calibration_path
                    else awb_calibration.identity_calibration())
            est = awb_model.predict_illuminant(
                model, thumb, frames[0].exposure_time, gain, cmap)
            return rgb, est, "model"
        return rgb, _gray_world(thumb), "gray_world"

    rgb_linear, illuminant, awb_method = stage("awb", do_awb)
    report["awb_method"] = awb_method
    report["illuminant_rgb"] = [float(x) for x in illuminant.rgb]

    def do_finish():
        wb_rgb = rgb_linear * illuminant.gains()
        stats = tonemap.estimate_scene_stats(
            wb_rgb, frames[0].exposure_time, gain,
            config.lux_calibration, config.tone)
        image = tonemap.finish(merged, illuminant, stats, config.tone,
                               config.finish_options)
        return stats, image

    stats, image = stage("finish", do_finish)
    a_s = (tonemap.shadow_gain(stats.illuminance_lux, config.tone)
           if config.finish_options.tone_heuristics else 1.0)
    report["scene"] = {
        "illuminance_lux": stats.illuminance_lux,
        "dynamic_range": stats.dynamic_range,
    }
    report["shadow_gain"] = a_s
    report["highlight_gain"] = tonemap.highlight_gain(
        a_s, stats.dynamic_range, config.tone)
    if include_timing:
        report["timings_ms"] = timings

    if out_png:
        from PIL import Image

        Image.fromarray(image).save(out_png)
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return image, report
