"""Command-line entry point: ``dogmapred <command> [--config FILE] [--key value ...]``.

Every command reads its settings from the ``[<command>]`` section of an
optional INI config file; any ``--key value`` pair on the command line
overrides the file (dashes and underscores are interchangeable in keys).
Each run writes ``manifest.json`` to its output directory, also on failure.

Commands and their main outputs::

    simulate          frames.dogm, truth.npz, stats.csv
    label             labels/t0_NNNNN.dlbl, labels/fractions.csv
    train             final.dnet, loss.csv, ckpt_*.dnet
    predict-net       net/t0_NNNNN.dlbl
    predict-particle  particles/t0_NNNNN.dcnt
    eval              metrics.csv, overlays/*.ppm
    inject            frames.dogm
    report            report.txt (also printed)
"""

from __future__ import annotations

import argparse
import configparser
import csv
import glob
import json
import os
import sys
import time
import traceback
from dataclasses import replace
from importlib import metadata

import numpy as np

from . import evaluation as ev
from .dataset import WARMUP_FRAMES, sample_times, split_dataset
from .grid import FrameError, GridSpec, LabelSpec, LabelTensor, read_sequence, write_sequence
from .labelgen import DetectorConfig, InsufficientHorizon, label_sample, load_labels, save_labels
from .nn.loss import LossWeights
from .nn.network import NetworkSpec, load_checkpoint
from .nn.train import TrainConfig, make_sample, predict_batch, train
from .particles import BaselineConfig, load_counts, particle_predict, save_counts
from .sim.scenario import load_scenario
from .sim.scenes import FAMILIES, downtown_scene, make_scene
from .sim.simulate import SimConfig, extract_patch, inject_patch, simulate

COMMANDS = ("simulate", "label", "train", "predict-net", "predict-particle", "eval", "inject", "report")

DEFAULTS = {
    "simulate": {"scenario": "straight", "seed": -1, "width": 0, "height": 0, "cell_width": 0.15,
                 "frame_period": 0.1, "alpha": 0.5, "mass_noise": 0.02, "velocity_noise": 0.15,
                 "occlusion": True, "duration": 0.0},
    "label": {"frames": "", "t0s": "", "stride": 5, "warmup": WARMUP_FRAMES, "horizon": 3.0, "step": 0.5,
              "smooth_sigma": 2.0, "smooth_radius": 6, "curvature_threshold": 0.01, "nms_window": 5,
              "min_peak_rise": 0.1},
    "train": {"data": "", "iterations": 2000, "batch_size": 4, "lr": 1e-4, "seed": 0, "widths": "16,32,64",
              "lambda_static": 1.0, "lambda_base": 100.0, "checkpoint_every": 0, "split": "0.8,0.1,0.1",
              "log_every": 0},
    "predict-net": {"checkpoint": "", "frames": "", "t0s": "", "stride": 5, "warmup": WARMUP_FRAMES, "step": 0.5},
    "predict-particle": {"frames": "", "t0s": "", "stride": 5, "warmup": WARMUP_FRAMES, "particles": 100000,
                         "var_threshold": 3.0, "speed_threshold": 0.7, "horizons": "0.5,1.0,1.5,2.0,2.5,3.0",
                         "seed": 0},
    "eval": {"truth": "", "net": "", "particle": "", "gammas": 99, "overlay_gamma": 0.5, "overlays": True},
    "inject": {"frames": "", "source": "", "source_frame": 0, "count": 1, "origin": "", "size": "",
               "start": 0},
    "report": {"run": ""},
}


class UsageError(Exception):
    pass


def _convert(default, text):
    if isinstance(default, bool):
        if str(text).lower() in ("1", "true", "yes", "on"):
            return True
        if str(text).lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    try:
        return type(default)(text)
    except ValueError:
        raise UsageError(f"expected {type(default).__name__}, got {text!r}") from None


def resolve_config(command: str, config_path: str | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        if not cp.read(config_path):
            raise UsageError(f"cannot read config {config_path}")
        if cp.has_section(command):
            for key, val in cp[command].items():
                _set(cfg, command, key, val)
    if len(overrides) % 2:
        raise UsageError(f"dangling override {overrides[-1]!r}")
    for key, val in zip(overrides[::2], overrides[1::2]):
        if not key.startswith("--"):
            raise UsageError(f"expected --key, got {key!r}")
        _set(cfg, command, key[2:], val)
    return cfg


def _set(cfg, command, key, val):
    key = key.replace("-", "_")
    if key not in cfg:
        raise UsageError(f"unknown setting {key!r} for {command}; known: {', '.join(sorted(cfg))}")
    cfg[key] = _convert(DEFAULTS[command][key], val)


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _need(cfg, *keys):
    for k in keys:
        if cfg[k] in ("", None):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _t0_list(cfg, n_frames, horizon_frames, margin):
    if cfg["t0s"]:
        return list(_ints(cfg["t0s"]))
    return sample_times(n_frames, horizon_frames, margin, cfg["stride"], cfg["warmup"])


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, out, manifest):
    name = cfg["scenario"]
    seed = cfg["seed"]
    # width/height 0 keep the scenario's own grid (128 street, 256 downtown)
    grid = GridSpec(cfg["width"] or 128, cfg["height"] or cfg["width"] or 128, cfg["cell_width"], cfg["frame_period"])
    if name == "downtown":
        scenario, grid = downtown_scene(seed if seed >= 0 else 7, size_cells=cfg["width"] or 256)
    elif name in FAMILIES:
        scenario = make_scene(name, max(seed, 0))
    else:
        scenario = load_scenario(name)
        manifest["inputs"].append(name)
    if seed >= 0 and scenario.seed != seed:
        scenario = replace(scenario, seed=seed)
    if cfg["duration"] > 0:
        scenario = replace(scenario, duration=cfg["duration"])
    manifest["seed"] = scenario.seed
    sim = SimConfig(grid, cfg["alpha"], cfg["mass_noise"], cfg["velocity_noise"], cfg["occlusion"])
    frames, truth, stats = simulate(scenario, sim)
    write_sequence(frames, os.path.join(out, "frames.dogm"))
    np.savez_compressed(os.path.join(out, "truth.npz"), truth=np.stack(truth).astype(np.uint8))
    stats.write_csv(os.path.join(out, "stats.csv"))
    manifest["outputs"] += ["frames.dogm", "truth.npz", "stats.csv"]
    manifest["summary"] = {"frames": len(frames), "mean_dynamic_fraction": stats.mean_dynamic_fraction}
    print(f"{len(frames)} frames, mean dynamic-cell fraction {stats.mean_dynamic_fraction:.4%}")


def _detector(cfg):
    return DetectorConfig(cfg["smooth_sigma"], cfg["smooth_radius"], cfg["curvature_threshold"],
                          cfg["nms_window"], cfg["min_peak_rise"])


def cmd_label(cfg, out, manifest):
    _need(cfg, "frames")
    manifest["inputs"].append(cfg["frames"])
    frames = read_sequence(cfg["frames"])
    det = _detector(cfg)
    hf = int(round(cfg["horizon"] / frames[0].grid.frame_period))
    os.makedirs(os.path.join(out, "labels"), exist_ok=True)
    rows = []
    for t0 in _t0_list(cfg, len(frames), hf, det.margin):
        res = label_sample(frames, LabelSpec(t0, cfg["horizon"], cfg["step"]), det)
        rel = os.path.join("labels", f"t0_{t0:05d}.dlbl")
        save_labels(res.labels, os.path.join(out, rel))
        manifest["outputs"].append(rel)
        rows.append((t0, res.dynamic_fraction(), int(res.fallback.sum())))
    with open(os.path.join(out, "labels", "fractions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t0", "dynamic_fraction", "fallback_cells"])
        w.writerows((t0, repr(f), n) for t0, f, n in rows)
    manifest["outputs"].append(os.path.join("labels", "fractions.csv"))
    print(f"{len(rows)} label tensors written")


def _load_run(run_dir):
    frames = read_sequence(os.path.join(run_dir, "frames.dogm"))
    labels = sorted(glob.glob(os.path.join(run_dir, "labels", "t0_*.dlbl")))
    if not labels:
        raise UsageError(f"{run_dir}: no labels (run 'label' first)")
    return frames, [load_labels(p) for p in labels]


def cmd_train(cfg, out, manifest):
    _need(cfg, "data")
    runs = [d for d in str(cfg["data"]).split(",") if d]
    samples, groups = [], []
    for d in runs:
        manifest["inputs"].append(d)
        frames, labels = _load_run(d)
        for lab in labels:
            samples.append(make_sample(frames[lab.t0], lab))
            groups.append(d)
    fractions = _floats(cfg["split"])
    tr, te, va = split_dataset(len(samples), fractions, cfg["seed"], groups if len(runs) > 1 else None)
    manifest["split"] = {"fractions": list(fractions), "train": tr, "test": te, "validation": va}
    K = samples[0][1].shape[0] - 1
    spec = NetworkSpec(stage_widths=_ints(cfg["widths"]), output_channels=1 + K)
    tc = TrainConfig(cfg["iterations"], cfg["batch_size"], cfg["lr"], cfg["seed"],
                     LossWeights.linear(K, cfg["lambda_base"], cfg["lambda_static"]),
                     cfg["checkpoint_every"], out, cfg["log_every"])
    _, trace = train([samples[i] for i in tr], spec, tc)
    manifest["outputs"] += ["final.dnet", "loss.csv"]
    manifest["summary"] = {"initial_loss": trace.total[0], "final_loss": trace.total[-1]}
    print(f"loss {trace.total[0]:.4g} -> {trace.total[-1]:.4g} over {len(trace.total)} iterations")


def cmd_predict_net(cfg, out, manifest):
    _need(cfg, "checkpoint", "frames")
    manifest["inputs"] += [cfg["checkpoint"], cfg["frames"]]
    params, spec = load_checkpoint(cfg["checkpoint"])
    frames = read_sequence(cfg["frames"])
    K = spec.output_channels - 1
    hf = int(round(K * cfg["step"] / frames[0].grid.frame_period))
    t0s = _t0_list(cfg, len(frames), hf, DetectorConfig().margin)
    os.makedirs(os.path.join(out, "net"), exist_ok=True)
    x = np.stack([frames[t].network_input() for t in t0s]).astype(np.float32)
    for t0, o in zip(t0s, predict_batch(params, spec, x)):
        rel = os.path.join("net", f"t0_{t0:05d}.dlbl")
        save_labels(LabelTensor(o[0], o[1:], np.ones(o[1:].shape, bool), t0, cfg["step"]), os.path.join(out, rel))
        manifest["outputs"].append(rel)
    print(f"{len(t0s)} network predictions written")


def cmd_predict_particle(cfg, out, manifest):
    _need(cfg, "frames")
    manifest["inputs"].append(cfg["frames"])
    manifest["seed"] = cfg["seed"]
    frames = read_sequence(cfg["frames"])
    bc = BaselineConfig(cfg["particles"], cfg["var_threshold"], cfg["speed_threshold"], _floats(cfg["horizons"]))
    hf = int(round(max(bc.horizons) / frames[0].grid.frame_period))
    t0s = _t0_list(cfg, len(frames), hf, DetectorConfig().margin)
    os.makedirs(os.path.join(out, "particles"), exist_ok=True)
    for t0 in t0s:
        rel = os.path.join("particles", f"t0_{t0:05d}.dcnt")
        save_counts(particle_predict(frames[t0], bc, cfg["seed"], t0), os.path.join(out, rel))
        manifest["outputs"].append(rel)
    print(f"{len(t0s)} particle predictions written")


def cmd_eval(cfg, out, manifest):
    _need(cfg, "truth")
    if not cfg["net"] and not cfg["particle"]:
        raise UsageError("give --net and/or --particle prediction directories")
    manifest["inputs"] += [p for p in (cfg["truth"], cfg["net"], cfg["particle"]) if p]
    frames = read_sequence(cfg["truth"])
    period = frames[0].grid.frame_period
    gammas = ev.default_gammas(cfg["gammas"])
    per = {}
    net = {}
    if cfg["net"]:
        for p in sorted(glob.glob(os.path.join(cfg["net"], "net", "t0_*.dlbl"))):
            lab = load_labels(p)
            net[lab.t0] = lab
    parts = {}
    if cfg["particle"]:
        for p in sorted(glob.glob(os.path.join(cfg["particle"], "particles", "t0_*.dcnt"))):
            c = load_counts(p)
            parts[c.t0] = c
    if not net and not parts:
        raise UsageError("no prediction files found")
    if cfg["overlays"]:
        os.makedirs(os.path.join(out, "overlays"), exist_ok=True)
    for t0 in sorted(set(net) | set(parts)):
        frame = frames[t0]
        n_k = net[t0].K if t0 in net else len(parts[t0].horizons)
        horizons = [net[t0].step * (k + 1) for k in range(n_k)] if t0 in net else list(parts[t0].horizons)
        for k, h in enumerate(horizons):
            ti = t0 + int(round(h / period))
            if ti >= len(frames):
                continue
            truth = frames[ti]
            if t0 in net:
                lab = net[t0]
                per.setdefault(("net", h), []).append(ev.evaluate_prediction(
                    lab.dynamic_channels[k], lab.static_channel, frame.ego_offset, truth, gammas, False, h, "net"))
            if t0 in parts and k < len(parts[t0].horizons):
                c = parts[t0]
                per.setdefault(("particles", h), []).append(ev.evaluate_prediction(
                    c.counts[k], c.static, frame.ego_offset, truth, gammas, True, h, "particles"))
            if cfg["overlays"] and t0 in net and t0 in parts:
                g = cfg["overlay_gamma"]
                lab, c = net[t0], parts[t0]
                img = ev.render_overlay(
                    ev.aligned_truth(truth, frame.ego_offset),
                    (lab.dynamic_channels[k] > g) | (lab.static_channel > ev.TRUTH_THRESHOLD),
                    (c.counts[k] > g * c.counts[k].max()) | (c.static > ev.TRUTH_THRESHOLD),
                    lab.static_channel)
                rel = os.path.join("overlays", f"t0_{t0:05d}_h{k + 1}.ppm")
                ev.write_ppm(img, os.path.join(out, rel))
                manifest["outputs"].append(rel)
    curves = [ev.pool_curves(per[key]) for key in sorted(per)]
    ev.export_metrics(curves, os.path.join(out, "metrics.csv"))
    manifest["outputs"].append("metrics.csv")
    manifest["summary"] = {f"{c.predictor}@{c.horizon}": ev.auc(c) for c in curves}
    print(_report_table(ev.read_metrics(os.path.join(out, "metrics.csv"))))


def cmd_inject(cfg, out, manifest):
    _need(cfg, "frames", "source", "origin", "size")
    manifest["inputs"] += [cfg["frames"], cfg["source"]]
    frames = read_sequence(cfg["frames"])
    src = read_sequence(cfg["source"])
    origin, size = _ints(cfg["origin"]), _ints(cfg["size"])
    patch, mask = extract_patch(src, origin, size, cfg["source_frame"], cfg["count"])
    write_sequence(inject_patch(frames, patch, mask, origin, cfg["start"]), os.path.join(out, "frames.dogm"))
    manifest["outputs"].append("frames.dogm")
    print(f"pasted {int(mask.sum())} cells into {cfg['count']} frame(s) from frame {cfg['start']}")


def _report_table(rows) -> str:
    aucs = {}
    for r in rows:
        aucs[(r["predictor"], r["horizon"])] = r["auc"]
    horizons = sorted({h for _, h in aucs})
    preds = sorted({p for p, _ in aucs})
    lines = ["horizon  " + "  ".join(f"{p:>10s}" for p in preds)]
    for h in horizons:
        cells = [f"{aucs[(p, h)]:10.4f}" if (p, h) in aucs else f"{'-':>10s}" for p in preds]
        lines.append(f"{h:6.1f}s  " + "  ".join(cells))
    return "\n".join(lines)


def cmd_report(cfg, out, manifest):
    run = cfg["run"] or out
    path = os.path.join(run, "metrics.csv")
    if not os.path.exists(path):
        raise UsageError(f"{run}: no metrics.csv (run 'eval' first)")
    manifest["inputs"].append(path)
    table = "AUC per horizon and predictor\n" + _report_table(ev.read_metrics(path))
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(table + "\n")
    manifest["outputs"].append("report.txt")
    print(table)


HANDLERS = {
    "simulate": cmd_simulate, "label": cmd_label, "train": cmd_train, "predict-net": cmd_predict_net,
    "predict-particle": cmd_predict_particle, "eval": cmd_eval, "inject": cmd_inject, "report": cmd_report,
}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dogmapred", description=__doc__.split("\n")[0],
                                epilog="Any further --key value pairs override config settings.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("run", nargs="?", help="run directory (report only)")
    p.add_argument("--config", help="INI file; settings are read from the [<command>] section")
    p.add_argument("--out", help="output directory (default: current directory)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    if args.run and args.command != "report":
        parser.error(f"unexpected argument {args.run!r}")
    out = args.out or (args.run if args.command == "report" and args.run else ".")
    manifest = {"command": args.command, "config": None, "config_file": args.config, "seed": None, "out": out,
                "inputs": [], "outputs": [], "version": _version(), "start": time.time(), "end": None,
                "split": None, "error": None}
    status = 0
    try:
        cfg = resolve_config(args.command, args.config, rest)
        if args.command == "report" and args.run:
            cfg["run"] = args.run
        manifest["config"] = cfg
        if "seed" in cfg:
            manifest["seed"] = cfg["seed"]
        os.makedirs(out, exist_ok=True)
        HANDLERS[args.command](cfg, out, manifest)
    except UsageError as exc:
        manifest["error"] = str(exc)
        print(f"dogmapred {args.command}: {exc}", file=sys.stderr)
        status = 2
    except (FrameError, InsufficientHorizon, ValueError, OSError) as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"dogmapred {args.command}: {manifest['error']}", file=sys.stderr)
        status = 1
    except Exception as exc:  # still leave a manifest behind
        manifest["error"] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        print(f"dogmapred {args.command}: {manifest['error']}", file=sys.stderr)
        status = 1
    manifest["end"] = time.time()
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    except OSError as exc:
        print(f"dogmapred: could not write manifest: {exc}", file=sys.stderr)
        status = status or 1
    return status


if __name__ == "__main__":
    sys.exit(main())
