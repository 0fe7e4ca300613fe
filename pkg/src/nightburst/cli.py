"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from . import burst_align, burst_merge, motion_metering, pipeline, synth_oracle, tonemap
from .awb import calibration as awb_calibration
from .awb import dataset as awb_dataset
from .awb import model as awb_model
from .errors import InputError, NumericError, StageError
from .raw_model import (
    GyroTrace,
    LinearImage,
    NoiseModel,
    load_burst,
    normalize,
    read_pgm,
    write_pgm,
)


def _plan_to_dict(plan: motion_metering.CapturePlan) -> dict:
    return {
        "exposure_time_s": plan.exposure_time,
        "gain": plan.gain,
        "frame_count": plan.frame_count,
        "stabilized": plan.stabilized,
        "predicted_v_min_px": plan.predicted_v_min,
        "sensitivity_clamped": plan.sensitivity_clamped,
    }


def _write_json(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _metering_params(args) -> motion_metering.MeteringParams:
    params = motion_metering.MeteringParams()
    overrides = {}
    if args.p_conf is not None:
        overrides["p_conf"] = args.p_conf
    if args.blur_budget is not None:
        overrides["blur_budget_b"] = args.blur_budget
    if args.max_frames is not None:
        overrides["max_frames"] = args.max_frames
    return dataclasses.replace(params, **overrides)


def cmd_meter(args) -> None:
    manifest, frames = load_burst(args.manifest)
    if len(frames) < 2:
        raise InputError("metering needs at least two frames")
    from .raw_model import load_weight_map

    params = _metering_params(args)
    samples, gmm = pipeline.run_metering(manifest, frames, params,
                                         load_weight_map(manifest))
    plan = motion_metering.plan_capture(
        gmm, manifest.gyro, args.target_sensitivity, params)
    doc = _plan_to_dict(plan)
    doc["motion_samples_px"] = [s.value for s in samples]
    _write_json(args.out, doc)


def cmd_plan(args) -> None:
    with open(args.samples) as f:
        doc = json.load(f)
    samples = [float(v) for v in doc["samples"]]
    gyro = None
    if doc.get("gyro"):
        gyro = GyroTrace(np.array(
            [[g["t_s"], g["wx"], g["wy"], g["wz"]] for g in doc["gyro"]]))
    params = _metering_params(args)
    gmm = motion_metering.fit_gmm(samples, params) if samples else None
    plan = motion_metering.plan_capture(gmm, gyro, args.target_sensitivity, params)
    _write_json(args.out, _plan_to_dict(plan))


def cmd_align(args) -> None:
    manifest, frames = load_burst(args.manifest)
    linear = [normalize(fr) for fr in frames]
    ref = burst_align.select_reference(linear, manifest.cfa,
                                       min(4, len(frames)))
    alignment = burst_align.align_burst(
        linear, manifest.cfa, ref, manifest.noise.at_gain(frames[0].gain))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "tile_row", "tile_col", "dx_px", "dy_px", "residual"])
        n, rows, cols = alignment.residuals.shape
        for z in range(n):
            for i in range(rows):
                for j in range(cols):
                    writer.writerow([
                        z, i, j,
                        int(alignment.displacements[z, i, j, 0]),
                        int(alignment.displacements[z, i, j, 1]),
                        f"{alignment.residuals[z, i, j]:.6g}",
                    ])
    print(f"reference index {ref.index}, tile size {alignment.tile_size} px")


def _merge_params(args) -> burst_merge.MergeParams:
    params = burst_merge.MergeParams()
    overrides = {}
    if args.temporal_strength is not None:
        overrides["temporal_strength"] = args.temporal_strength
    if args.mismatch_s is not None:
        overrides["mismatch_scale"] = args.mismatch_s
    if args.force_f1:
        overrides["force_f1"] = True
    return dataclasses.replace(params, **overrides)


def cmd_merge(args) -> None:
    manifest, frames = load_burst(args.manifest)
    linear = [normalize(fr) for fr in frames]
    noise = manifest.noise.at_gain(frames[0].gain)
    ref = burst_align.select_reference(linear, manifest.cfa, min(4, len(frames)))
    alignment = burst_align.align_burst(linear, manifest.cfa, ref, noise)
    params = _merge_params(args)
    merged = burst_merge.merge_fourier(
        linear, manifest.cfa, alignment, None, noise, params)
    if not args.no_spatial_denoise:
        merged = burst_merge.spatial_denoise(merged, noise, params)

    from .raw_model import denormalize

    mosaic = denormalize(LinearImage(np.clip(merged.mosaic(), 0, 1)),
                         manifest.black_level, manifest.white_level, manifest.cfa)
    write_pgm(args.out, mosaic, maxval=65535)
    if args.out_neff:
        scale = 65535.0 / len(frames)
        write_pgm(args.out_neff,
                  np.rint(merged.n_eff * scale).astype(np.uint16), maxval=65535)
    print(f"merged {len(frames)} frames, reference {ref.index}, "
          f"mean N_eff {merged.n_eff.mean():.2f}")


def cmd_finish(args) -> None:
    from .raw_model import load_manifest

    manifest = load_manifest(args.manifest)
    data = read_pgm(args.merged)
    black = np.array(manifest.black_level, dtype=np.float64).mean()
    lin = np.clip((data.astype(np.float64) - black)
                  / (manifest.white_level - black), 0.0, 1.0)
    planes = np.stack(
        [lin[dy::2, dx::2] for dy, dx in
         [(0, 0), (0, 1), (1, 0), (1, 1)]])
    rows, cols = planes.shape[1] // 8, planes.shape[2] // 8
    merged = burst_merge.MergedRaw(planes=planes, cfa=manifest.cfa,
                                   n_eff=np.ones((rows, cols)))
    illum = awb_model.IlluminantEstimate(rgb=np.array(
        [float(v) for v in args.illuminant.split(",")]))
    stats = tonemap.SceneStats(illuminance_lux=args.ev,
                               dynamic_range=args.dyn_range)
    options = tonemap.FinishOptions(
        tone_heuristics=not args.no_tone_heuristics,
        saturation=not args.no_saturation,
        vignette=not args.no_vignette,
        black_anchor=not args.no_black_anchor,
    )
    image = tonemap.finish(merged, illum, stats, tonemap.ToneParams(), options)
    from PIL import Image

    Image.fromarray(image).save(args.out)
    print(f"wrote {args.out}")


def cmd_awb_train(args) -> None:
    dataset = awb_dataset.load_dataset(args.dataset)
    cfg = awb_model.TrainConfig(loss=args.loss, iterations=args.iterations)
    model = awb_model.train_model(dataset, loss=args.loss, config=cfg)
    awb_model.save_model(args.out, model)
    report = awb_model.evaluate_model(model, dataset)
    print(json.dumps({"training_set": report}, indent=2, sort_keys=True))


def cmd_awb_eval(args) -> None:
    dataset = awb_dataset.load_dataset(args.dataset)
    cfg = awb_model.TrainConfig(iterations=args.iterations)
    results = awb_model.cross_validate(
        dataset, losses=tuple(args.losses.split(",")), folds=args.folds, config=cfg)
    _write_json(args.out, results)


def cmd_awb_predict(args) -> None:
    model = awb_model.load_model(args.model)
    cmap = (awb_calibration.load_calibration(args.calibration)
            if args.calibration else awb_calibration.identity_calibration())
    dataset = awb_dataset.load_dataset(args.input)
    ex = dataset[args.index]
    est = awb_model.predict_illuminant(
        model, ex.thumbnail, ex.exposure_time, ex.gain, cmap)
    _write_json(args.out, {"illuminant_rgb": [float(v) for v in est.rgb],
                           "gains": [float(v) for v in est.gains()]})


def cmd_synth(args) -> None:
    with open(args.spec) as f:
        doc = json.load(f)
    noise_doc = doc.pop("noise", {"slope": 1e-4, "intercept": 1e-6, "ref_gain": 1.0})
    scene = synth_oracle.SyntheticScene(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()
    })
    noise = NoiseModel(noise_doc["slope"], noise_doc["intercept"],
                       noise_doc.get("ref_gain", 1.0))
    frames, truth = synth_oracle.generate_burst(
        scene, args.frames, args.exposure, args.gain,
        noise.at_gain(args.gain), seed=args.seed)
    path = synth_oracle.write_burst(args.out, frames, noise, truth=truth)
    print(f"wrote {path}")


def cmd_run(args) -> None:
    config = (pipeline.PipelineConfig.from_file(args.config)
              if args.config else pipeline.PipelineConfig())
    if args.awb_model:
        config.awb_model_path = args.awb_model
    if args.calibration:
        config.calibration_path = args.calibration
    if args.threads:
        config.threads = args.threads
    if args.force_f1:
        config.merge = dataclasses.replace(config.merge, force_f1=True)
    if args.no_tone:
        config.finish_options = tonemap.FinishOptions(
            tone_heuristics=False, saturation=False,
            vignette=False, black_anchor=False)
    _, report = pipeline.run_pipeline(
        args.burst,
        config,
        metering_manifest_path=args.metering,
        out_png=args.out,
        report_path=args.report,
        include_timing=not args.no_timing,
    )
    print(f"wrote {args.out}" if args.out else
          json.dumps(report, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nightburst",
                                description="Low-light burst processing engine")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("meter", help="metering manifest -> capture plan")
    m.add_argument("--manifest", required=True)
    m.add_argument("--target-sensitivity", type=float, default=1.0)
    m.add_argument("--p-conf", type=float, default=None)
    m.add_argument("--blur-budget", type=float, default=None)
    m.add_argument("--max-frames", type=int, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_meter)

    pl = sub.add_parser("plan", help="motion samples JSON -> capture plan")
    pl.add_argument("--samples", required=True)
    pl.add_argument("--target-sensitivity", type=float, default=1.0)
    pl.add_argument("--p-conf", type=float, default=None)
    pl.add_argument("--blur-budget", type=float, default=None)
    pl.add_argument("--max-frames", type=int, default=None)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plan)

    al = sub.add_parser("align", help="dump tile displacements as CSV")
    al.add_argument("--manifest", required=True)
    al.add_argument("--out", required=True)
    al.set_defaults(func=cmd_align)

    mg = sub.add_parser("merge", help="burst manifest -> merged mosaic PGM")
    mg.add_argument("--manifest", required=True)
    mg.add_argument("--out", required=True)
    mg.add_argument("--out-neff", default=None)
    mg.add_argument("--temporal-strength", type=float, default=None)
    mg.add_argument("--mismatch-s", type=float, default=None)
    mg.add_argument("--force-f1", action="store_true")
    mg.add_argument("--no-spatial-denoise", action="store_true")
    mg.set_defaults(func=cmd_merge)

    fi = sub.add_parser("finish", help="merged mosaic -> sRGB PNG")
    fi.add_argument("--merged", required=True)
    fi.add_argument("--manifest", required=True)
    fi.add_argument("--illuminant", default="1,1,1")
    fi.add_argument("--ev", type=float, required=True)
    fi.add_argument("--dyn-range", type=float, default=0.5)
    fi.add_argument("--out", required=True)
    fi.add_argument("--no-tone-heuristics", action="store_true")
    fi.add_argument("--no-saturation", action="store_true")
    fi.add_argument("--no-vignette", action="store_true")
    fi.add_argument("--no-black-anchor", action="store_true")
    fi.set_defaults(func=cmd_finish)

    at = sub.add_parser("awb-train", help="train the illuminant model")
    at.add_argument("--dataset", required=True)
    at.add_argument("--loss", default="are",
                    choices=["angular", "reproduction", "are", "von-mises"])
    at.add_argument("--iterations", type=int, default=160)
    at.add_argument("--out", required=True)
    at.set_defaults(func=cmd_awb_train)

    ae = sub.add_parser("awb-eval", help="cross-validated metric report")
    ae.add_argument("--dataset", required=True)
    ae.add_argument("--losses", default="von-mises,reproduction,angular,are")
    ae.add_argument("--folds", type=int, default=3)
    ae.add_argument("--iterations", type=int, default=160)
    ae.add_argument("--out", default=None)
    ae.set_defaults(func=cmd_awb_eval)

    ap = sub.add_parser("awb-predict", help="predict an illuminant")
    ap.add_argument("--model", required=True)
    ap.add_argument("--input", required=True, help="dataset npz")
    ap.add_argument("--index", type=int, default=0)
    ap.add_argument("--calibration", default=None)
    ap.add_argument("--out", default=None)
    ap.set_defaults(func=cmd_awb_predict)

    sy = sub.add_parser("synth", help="scene spec JSON -> synthetic burst")
    sy.add_argument("--spec", required=True)
    sy.add_argument("--out", required=True)
    sy.add_argument("--frames", type=int, default=8)
    sy.add_argument("--exposure", type=float, default=0.1)
    sy.add_argument("--gain", type=float, default=8.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)

    rn = sub.add_parser("run", help="full pipeline: burst -> PNG + report")
    rn.add_argument("--burst", required=True)
    rn.add_argument("--metering", default=None)
    rn.add_argument("--config", default=None)
    rn.add_argument("--out", default=None)
    rn.add_argument("--report", default=None)
    rn.add_argument("--awb-model", default=None)
    rn.add_argument("--calibration", default=None)
    rn.add_argument("--threads", type=int, default=None)
    rn.add_argument("--force-f1", action="store_true")
    rn.add_argument("--no-tone", action="store_true")
    rn.add_argument("--no-timing", action="store_true")
    rn.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if isinstance(e.cause, InputError) else 3
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
