"""Command line entry point: gen-data, train-gen, train-planner, synth, eval.

Every subcommand resolves its options as defaults < JSON config file < flags,
rejects unknown config keys and checks paths before doing any work.
Exit codes: 0 ok, 2 input/path, 3 training gate, 4 scene construction, 5 validation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .coordination import CoordinationError, SceneConfig, SpawnError, run_scene
from .generator import (GeneratorError, NoiseSchedule, TrainConfig, gradcheck, load_checkpoint, save_checkpoint,
                        train_denoiser)
from .guidance import ConstraintSet
from .motion import (MotionError, hip_distance, load_scene, min_pairwise_hip_distance, peak_jerk, save_scene)
from .planner import PlannerError, PlannerPolicy, RLConfig, distinct_matchings, load_policy, save_policy, train_policy
from .synth_data import Corpus, build_corpus, get_style

log = logging.getLogger("coordsynth")

EXIT_OK, EXIT_INPUT, EXIT_GATE, EXIT_SCENE, EXIT_INVALID = 0, 2, 3, 4, 5


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class GenDataOptions:
    out: str = "corpus.npz"
    style: str = "dance"
    n_episodes: int = 200
    seed: int = 0
    episode_steps: int = 8
    stride: int = 4
    val_fraction: float = 0.1
    fps: int = 20
    w: int = 16


@dataclass
class TrainGenOptions:
    corpus: str = "corpus.npz"
    out: str = "generator.npz"
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float = 1e-4
    seed: int = 0
    hidden: list = field(default_factory=lambda: [256, 256, 256])
    U: int = 50
    context_frames: int = 4
    context_prob: float = 0.5
    gradcheck_tol: float = 1e-3


@dataclass
class TrainPlannerOptions:
    generator: str = "generator.npz"
    out: str = "policy.npz"
    reward_csv: Optional[str] = None
    episodes: int = 240
    T: int = 8
    gamma: float = 0.95
    lr: float = 3e-3
    baseline_decay: float = 0.9
    seed: int = 0
    H: int = 3
    n_characters: int = 4
    batch_episodes: int = 4
    window: int = 10
    tau: float = 0.25
    lambda_smooth: float = 0.01
    w_dist: float = 1.0
    eta_guidance: float = 4.0


@dataclass
class SynthOptions:
    generator: str = "generator.npz"
    out: str = "scene.json"
    plan_log: Optional[str] = None
    policy: str = "static"
    policy_path: Optional[str] = None
    style: Optional[str] = None
    n: int = 4
    T: int = 4
    seed: int = 0
    add_character: list = field(default_factory=list)
    tau: float = 0.25
    lambda_smooth: float = 0.01
    w_dist: float = 1.0
    eta_guidance: float = 4.0
    guidance: bool = True
    spacing: Optional[float] = None
    k_overlap: int = 4


@dataclass
class EvalOptions:
    inputs: list = field(default_factory=list)
    out: str = "metrics.csv"


OPTIONS = {"gen-data": GenDataOptions, "train-gen": TrainGenOptions, "train-planner": TrainPlannerOptions,
           "synth": SynthOptions, "eval": EvalOptions}


# ---------------------------------------------------------------------------
# option resolution


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_flags(parser: argparse.ArgumentParser, cls) -> None:
    for f in fields(cls):
        if f.name == "inputs":
            parser.add_argument("inputs", nargs="*", default=None, help="scene files or directories")
            continue
        default = f.default if not callable(f.default_factory) else f.default_factory()
        kind = type(default) if default is not None else str
        if f.name == "spacing":
            kind = float
        if kind is bool:
            parser.add_argument(_flag(f.name), dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        elif kind is list:
            if f.name == "add_character":
                parser.add_argument(_flag(f.name), dest=f.name, default=None, action="append", metavar="t,x,y")
            else:
                parser.add_argument(_flag(f.name), dest=f.name, default=None, type=int, nargs="+")
        else:
            parser.add_argument(_flag(f.name), dest=f.name, default=None, type=kind)


def resolve_options(cls, config_path: Optional[str], args: argparse.Namespace):
    """Defaults, then the config file, then flags that were actually given."""
    values = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise CLIError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise CLIError(f"{path}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise CLIError(f"{path}: unknown config key(s): {', '.join(unknown)}")
        values.update(loaded)
    for f in fields(cls):
        v = getattr(args, f.name, None)
        if v is not None and not (f.name == "inputs" and not v):
            values[f.name] = v
    try:
        return cls(**values)
    except TypeError as exc:
        raise CLIError(str(exc)) from exc


def _need_file(path: Optional[str], what: str) -> Path:
    if not path or not Path(path).is_file():
        raise CLIError(f"{what} not found: {path}")
    return Path(path)


def _need_writable(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists() or not p.parent.is_dir():
        raise CLIError(f"output directory does not exist: {p.parent}")
    if p.is_dir():
        raise CLIError(f"output path is a directory: {p}")
    return p


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(opt: GenDataOptions) -> int:
    out = _need_writable(opt.out)
    try:
        style = get_style(opt.style, fps=opt.fps, w=opt.w)
        corpus = build_corpus(style, opt.n_episodes, opt.seed, T=opt.episode_steps, stride=opt.stride,
                              val_fraction=opt.val_fraction)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    try:
        corpus.save(out)
    except OSError as exc:
        raise CLIError(f"cannot write {out}: {exc}") from exc
    hips = corpus.train[:, :, :, 0, :3]
    gap = np.linalg.norm(hips[:, 0] - hips[:, 1], axis=-1)
    print(f"corpus {out}: style={style.name} train={len(corpus.train)} val={len(corpus.val)} "
          f"clip={tuple(corpus.clip_shape)} partner_distance={gap.mean():.3f}")
    return EXIT_OK


def cmd_train_gen(opt: TrainGenOptions) -> int:
    src = _need_file(opt.corpus, "corpus")
    out = _need_writable(opt.out)
    try:
        corpus = Corpus.load(src)
    except (OSError, ValueError, KeyError) as exc:
        raise CLIError(f"{src}: unreadable corpus ({exc})") from exc
    config = TrainConfig(steps=opt.steps, batch_size=opt.batch_size, lr=opt.lr, lr_final=opt.lr_final,
                         seed=opt.seed, hidden=tuple(opt.hidden), context_frames=opt.context_frames,
                         context_prob=opt.context_prob)
    schedule = NoiseSchedule.linear(opt.U)
    start = time.time()

    def progress(step, loss):
        if step % 250 == 0:
            log.info("step %d loss %.4f", step, loss)

    try:
        model, history = train_denoiser(corpus, schedule, config, progress)
    except GeneratorError as exc:
        raise CLIError(str(exc), EXIT_GATE) from exc
    batch = corpus.normalize(corpus.train[:4])
    err = gradcheck(model, batch, seed=opt.seed)
    print(f"gradcheck max relative error {err:.2e} (tolerance {opt.gradcheck_tol:g})")
    if not err <= opt.gradcheck_tol:
        raise CLIError(f"gradient check failed ({err:.2e} > {opt.gradcheck_tol:g}); checkpoint not written",
                       EXIT_GATE)
    save_checkpoint(out, model)
    loss_csv = _sidecar(out, "_loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss"])
        val = dict(zip(history["val_step"], history["val_loss"]))
        for s, l in zip(history["step"], history["train_loss"]):
            writer.writerow([s, repr(l), repr(val[s]) if s in val else ""])
    print(f"generator {out}: {opt.steps} steps in {time.time() - start:.0f}s, "
          f"val loss {history['val_loss'][0]:.4f} -> {history['val_loss'][-1]:.4f}")
    return EXIT_OK


def _rl_config(opt: TrainPlannerOptions) -> RLConfig:
    return RLConfig(episodes=opt.episodes, T=opt.T, gamma=opt.gamma, lr=opt.lr, baseline_decay=opt.baseline_decay,
                    seed=opt.seed, H=opt.H, n_characters=opt.n_characters, batch_episodes=opt.batch_episodes,
                    window=opt.window, tau=opt.tau, lambda_smooth=opt.lambda_smooth, w_dist=opt.w_dist,
                    eta=opt.eta_guidance)


def _load_generator(path: Path):
    try:
        return load_checkpoint(path)
    except GeneratorError as exc:
        raise CLIError(str(exc)) from exc


def cmd_train_planner(opt: TrainPlannerOptions) -> int:
    gen_path = _need_file(opt.generator, "generator checkpoint")
    out = _need_writable(opt.out)
    reward_csv = _need_writable(opt.reward_csv) if opt.reward_csv else _sidecar(out, "_reward.csv")
    generator = _load_generator(gen_path)
    try:
        config = _rl_config(opt)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    start = time.time()
    try:
        net, curve = train_policy(generator, config,
                                  lambda ep, r: log.info("episode %d reward %.4f", ep, r) if ep % 10 == 0 else None)
    except (PlannerError, CoordinationError) as exc:
        raise CLIError(str(exc), EXIT_GATE) from exc
    save_policy(out, net, config, curve)
    with open(reward_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_reward", "baseline"])
        for row in zip(curve["episode"], curve["mean_reward"], curve["baseline"]):
            writer.writerow([row[0], repr(row[1]), repr(row[2])])
    r = np.asarray(curve["mean_reward"])
    k = max(1, len(r) // 10)
    print(f"policy {out}: {len(r)} episodes in {time.time() - start:.0f}s, "
          f"reward first decile {r[:k].mean():.4f} -> last decile {r[-k:].mean():.4f}")
    return EXIT_OK


def parse_event(text) -> tuple[int, float, float]:
    """``t,x,y`` with y the second ground coordinate (stored on the z axis)."""
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).split(",")
    if len(parts) != 3:
        raise CLIError(f"bad --add-character {text!r}; expected t,x,y")
    try:
        t, x, y = int(parts[0]), float(parts[1]), float(parts[2])
    except ValueError as exc:
        raise CLIError(f"bad --add-character {text!r}; expected t,x,y") from exc
    if t < 1 or not np.isfinite([x, y]).all():
        raise CLIError(f"bad --add-character {text!r}; t must be >= 1 and x, y finite")
    return t, x, y


def _generator_style(generator) -> Optional[str]:
    return generator.meta.get("corpus", {}).get("style", {}).get("name")


def cmd_synth(opt: SynthOptions) -> int:
    gen_path = _need_file(opt.generator, "generator checkpoint")
    out = _need_writable(opt.out)
    plan_path = _need_writable(opt.plan_log) if opt.plan_log else _sidecar(out, ".plans.json")
    if opt.policy not in ("trained", "random", "static"):
        raise CLIError(f"unknown policy {opt.policy!r}; choose trained, random or static")
    policy = opt.policy
    if opt.policy == "trained":
        pol_path = _need_file(opt.policy_path, "policy checkpoint")
        try:
            net, _ = load_policy(pol_path)
        except (OSError, ValueError, KeyError, PlannerError) as exc:
            raise CLIError(f"{pol_path}: unreadable policy ({exc})") from exc
        policy = PlannerPolicy(net)
    events = [parse_event(e) for e in opt.add_character]
    generator = _load_generator(gen_path)
    style = _generator_style(generator)
    if opt.style is not None and style is not None and opt.style != style:
        raise CLIError(f"--style {opt.style} does not match the generator's style {style!r}")
    try:
        cons = ConstraintSet(opt.tau, opt.lambda_smooth, opt.w_dist)
        config = SceneConfig(n_characters=opt.n, T=opt.T, seed=opt.seed, constraints=cons, spacing=opt.spacing,
                             eta=opt.eta_guidance, k_overlap=opt.k_overlap, guidance=opt.guidance)
    except (ValueError, CoordinationError) as exc:
        raise CLIError(str(exc)) from exc
    start = time.time()
    try:
        timeline, plans = run_scene(config, generator, policy, events)
    except SpawnError as exc:
        raise CLIError(f"{exc} (event {opt.add_character})", EXIT_SCENE) from exc
    except CoordinationError as exc:
        raise CLIError(str(exc), EXIT_SCENE) from exc
    header = {"options": asdict(opt), "generator_style": style, "scene": {**asdict(config),
              "grid_spacing": config.grid_spacing}, "events": [list(e) for e in events]}
    header["options"].pop("out")
    header["options"].pop("plan_log")
    save_scene(out, timeline, header)
    with open(plan_path, "w") as fh:
        json.dump({"seed": opt.seed, "policy": opt.policy, "plans": plans}, fh, sort_keys=True,
                  separators=(",", ":"))
    n_virtual = sum(timeline.virtual_flags)
    print(f"scene {out}: N={timeline.N} ({n_virtual} virtual) T={timeline.T} frames="
          f"{timeline.continuous().shape[1]} in {time.time() - start:.1f}s")
    return EXIT_OK


def _scene_files(inputs) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(q for q in p.glob("*.json") if not q.name.endswith(".plans.json"))
        elif p.is_file():
            files.append(p)
        else:
            raise CLIError(f"no such scene file or directory: {p}")
    if not files:
        raise CLIError("no scene files given")
    return files


METRIC_FIELDS = ["scene_id", "seed", "TS", "HD", "min_pairwise_hip_distance", "N", "T",
                 "distinct_min", "distinct_mean", "quads_multi", "quads"]


def evaluate_scene(path: Path) -> dict:
    try:
        timeline = load_scene(path)
    except (MotionError, ValueError, KeyError, TypeError, OSError) as exc:
        raise CLIError(f"{path}: invalid scene ({exc})", EXIT_INVALID) from exc
    try:
        ts = peak_jerk(timeline)
    except MotionError:
        ts = float("nan")
    row = {"scene_id": path.stem, "seed": timeline.seed, "TS": ts, "HD": hip_distance(timeline),
           "min_pairwise_hip_distance": min_pairwise_hip_distance(timeline), "N": timeline.N, "T": timeline.T,
           "distinct_min": "", "distinct_mean": "", "quads_multi": "", "quads": ""}
    plan_file = _sidecar(path, ".plans.json")
    if plan_file.is_file():
        try:
            plans = json.loads(plan_file.read_text())["plans"]
            counts = distinct_matchings(plans)
        except (ValueError, KeyError, TypeError) as exc:
            raise CLIError(f"{plan_file}: invalid plan log ({exc})", EXIT_INVALID) from exc
        if counts:
            vals = list(counts.values())
            row.update(distinct_min=min(vals), distinct_mean=float(np.mean(vals)),
                       quads_multi=sum(v >= 2 for v in vals), quads=len(vals))
    return row


def cmd_eval(opt: EvalOptions) -> int:
    files = _scene_files(opt.inputs)
    out = _need_writable(opt.out)
    rows = [evaluate_scene(p) for p in files]
    with open(out, "w", newline="") as fh:
        fh.write("# " + json.dumps({"inputs": [str(p) for p in files]}, sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    for row in rows:
        print(f"{row['scene_id']}: TS={row['TS']:.4g} HD={row['HD']:.4g} "
              f"min_hip={row['min_pairwise_hip_distance']:.3f}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train-gen": cmd_train_gen, "train-planner": cmd_train_planner,
            "synth": cmd_synth, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coordsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cls in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON file with option values")
        _add_flags(p, cls)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        options = resolve_options(OPTIONS[args.command], args.config, args)
        return COMMANDS[args.command](options)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
