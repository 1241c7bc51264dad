"""Command-line pipeline: simulate -> train -> track -> eval -> report.

All stages share one output directory::

    <out>/config.json                    resolved configuration (written by simulate)
    <out>/colon.json                     rest colon model and markers
    <out>/sequences/{train,eval}_NN.jsonl
    <out>/model/checkpoint.json, history.json
    <out>/tracks/<estimator>/eval_NN.jsonl
    <out>/eval/<estimator>/errors.json
    <out>/report/<estimator>/report.{json,csv,txt}

Configuration comes from ``--config`` (or ``<out>/config.json`` when present),
then individual flags override single keys.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from colontrack import io as cio
from colontrack.errors import (
    ColonTrackError,
    ConfigurationError,
    EmptyDatasetError,
    InvalidInputError,
    StorageError,
)
from colontrack.evaluation import MarkerError, aggregate, marker_errors
from colontrack.registration import IcpParams
from colontrack.sen import checkpoint
from colontrack.sen.training import TrainConfig, train
from colontrack.simulator import (
    DeformationParams,
    generate_colon,
    icp_target,
    place_markers,
    random_sensor_pose,
    simulate_retraction,
)
from colontrack.tracking import (
    OracleEstimator,
    RestShapeEstimator,
    register_first_frame,
    registered_sequence,
    run_sequence,
    tracker_init,
)

log = logging.getLogger("colontrack")

ESTIMATORS = ("sen", "rigid", "oracle")
EXIT_CODES = {
    "error": 1,
    "usage": 2,
    "invalid-input": 3,
    "empty-dataset": 3,
    "configuration": 4,
    "checkpoint": 5,
    "io": 6,
    "degenerate-registration": 7,
    "training-diverged": 8,
}
# stream id mixed into each run seed for the sensor misalignment draw
_POSE_STREAM = 0x5E5


@dataclass(frozen=True)
class SimulationConfig:
    train_runs: int = 10
    eval_runs: int = 5
    frames: int = 300
    noise_mm: float = 1.0
    train_seed_base: int = 1000
    eval_seed_base: int = 2000
    sensor_misalignment: bool = True
    amplitudes: dict = field(default_factory=lambda: dict(DeformationParams().amplitudes))
    stochastic_share: dict = field(default_factory=lambda: dict(DeformationParams().stochastic_share))
    release_length: float = 150.0


@dataclass(frozen=True)
class TrackingConfig:
    estimator: str = "sen"
    compare_rigid: bool = True
    icp_max_iterations: int = 100
    icp_tol: float = 1e-6
    icp_trim: float = 0.0
    reregister_each_frame: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out: str = "run"
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=40))
    tracking: TrackingConfig = field(default_factory=TrackingConfig)

    def __post_init__(self):
        sim = self.simulation
        if sim.train_runs < 0 or sim.eval_runs < 0:
            raise InvalidInputError("run counts must be >= 0")
        if sim.frames < self.training.window:
            raise InvalidInputError(
                f"frames ({sim.frames}) must be at least the window ({self.training.window})"
            )
        if self.tracking.estimator not in ESTIMATORS:
            raise InvalidInputError(
                f"unknown estimator {self.tracking.estimator!r}; choose from {', '.join(ESTIMATORS)}"
            )

    def as_dict(self):
        return asdict(self)

    def digest(self):
        """Digest of everything that affects results (the output path does not)."""
        data = self.as_dict()
        data.pop("out")
        return cio.digest(data)

    def deformation(self, noise_seed):
        return DeformationParams(
            amplitudes=dict(self.simulation.amplitudes),
            stochastic_share=dict(self.simulation.stochastic_share),
            release_length=self.simulation.release_length,
            noise_seed=noise_seed,
        )

    def icp_params(self):
        t = self.tracking
        return IcpParams(
            max_iterations=t.icp_max_iterations, convergence_tol=t.icp_tol, trim_fraction=t.icp_trim
        )


_SECTIONS = {"simulation": SimulationConfig, "training": TrainConfig, "tracking": TrackingConfig}


def config_from_dict(data):
    unknown = set(data) - {"seed", "out"} - set(_SECTIONS)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise InvalidInputError(f"unknown keys in {name}: {', '.join(sorted(bad))}")
        base = PipelineConfig().__getattribute__(name)
        kwargs[name] = replace(base, **section)
    for key in ("seed", "out"):
        if key in data:
            kwargs[key] = data[key]
    return PipelineConfig(**kwargs)


# flag name -> (section or None, key, type)
_FLAG_KEYS = {
    "seed": (None, "seed", int),
    "out": (None, "out", str),
    "train_runs": ("simulation", "train_runs", int),
    "eval_runs": ("simulation", "eval_runs", int),
    "frames": ("simulation", "frames", int),
    "noise_mm": ("simulation", "noise_mm", float),
    "epochs": ("training", "epochs", int),
    "learning_rate": ("training", "learning_rate", float),
    "batch_size": ("training", "batch_size", int),
    "train_seed": ("training", "seed", int),
    "estimator": ("tracking", "estimator", str),
}


def resolve_config(args):
    path = args.config
    if path is None and args.out is not None:
        candidate = Path(args.out) / "config.json"
        if candidate.exists():
            path = candidate
    data = cio.read_json(path) if path is not None else {}
    for flag, (section, key, _) in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            data[key] = value
        else:
            data.setdefault(section, {})[key] = value
    return config_from_dict(data)


# ------------------------------------------------------------------- layout


def _paths(cfg):
    out = Path(cfg.out)
    return {
        "out": out,
        "config": out / "config.json",
        "colon": out / "colon.json",
        "sequences": out / "sequences",
        "checkpoint": out / "model" / "checkpoint.json",
        "history": out / "model" / "history.json",
    }


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create directory {path}: {exc.strerror}") from exc


def _sequence_files(cfg, split):
    count = cfg.simulation.train_runs if split == "train" else cfg.simulation.eval_runs
    return [_paths(cfg)["sequences"] / f"{split}_{i:02d}.jsonl" for i in range(count)]


def run_seed(cfg, split, index):
    base = cfg.simulation.train_seed_base if split == "train" else cfg.simulation.eval_seed_base
    return int(cfg.seed) * 100000 + base + index


def _load_colon(cfg):
    path = _paths(cfg)["colon"]
    if not path.exists():
        raise ConfigurationError(f"{path} not found; run 'simulate' first")
    return cio.load_colon(path)


def _load_sequences(cfg, split, colon_digest, markers):
    files = _sequence_files(cfg, split)
    if not files:
        raise EmptyDatasetError(f"config requests 0 {split} runs")
    out = []
    for path in files:
        if not path.exists():
            raise ConfigurationError(f"{path} not found; run 'simulate' with this config first")
        header, seq = cio.read_sequence(path, markers)
        cio.check_digest(header, colon_digest, "colon.json", path)
        out.append((path, header, seq))
    return out


# ------------------------------------------------------------------- stages


def cmd_simulate(cfg):
    sim = cfg.simulation
    if sim.train_runs == 0:
        raise EmptyDatasetError("train_runs is 0; the training dataset would be empty")
    if sim.eval_runs == 0:
        raise EmptyDatasetError("eval_runs is 0; there would be nothing to evaluate")
    paths = _paths(cfg)
    _mkdir(paths["sequences"])
    cio.write_json(paths["config"], cfg.as_dict())
    model = generate_colon(cfg.seed)
    markers = place_markers(model)
    colon_digest = cio.save_colon(paths["colon"], model, markers)
    written = []
    for split in ("train", "eval"):
        for i, path in enumerate(_sequence_files(cfg, split)):
            seed = run_seed(cfg, split, i)
            pose = None
            if sim.sensor_misalignment:
                pose = random_sensor_pose(np.random.default_rng([seed, _POSE_STREAM]))
            seq = simulate_retraction(
                model, cfg.deformation(seed), sim.frames, sim.noise_mm, seed=seed, sensor_pose=pose
            )
            header = dict(seq.meta)
            header.update({"split": split, "run": i, "colon_digest": colon_digest})
            cio.write_sequence(path, seq, header)
            written.append(path)
            log.info("wrote %s", path)
    return written


def _register(cfg, model, seq):
    return register_first_frame(seq, icp_target(model), cfg.icp_params())


def cmd_train(cfg, progress=None):
    paths = _paths(cfg)
    model, markers, colon_digest = _load_colon(cfg)
    loaded = _load_sequences(cfg, "train", colon_digest, markers)
    sequences = []
    for _, _, seq in loaded:
        transform = _register(cfg, model, seq)
        sequences.append(registered_sequence(seq, transform))
    sen, history = train(sequences, cfg.training, rest_points=model.rest_shape.points, progress=progress)
    _mkdir(paths["checkpoint"].parent)
    checkpoint.save(sen, paths["checkpoint"])
    hist = history.as_dict()
    hist.update({"colon_digest": colon_digest, "config_digest": cfg.digest()})
    cio.write_json(paths["history"], hist)
    # the written file must load back into an identical model
    reloaded = checkpoint.load(paths["checkpoint"])
    for name, value in sen.params.items():
        if not np.array_equal(value, reloaded.params[name]):
            raise StorageError(f"checkpoint round trip changed {name}")
    return sen, history


def _estimator_for(cfg, name, model, seq):
    if name == "rigid":
        return None, RestShapeEstimator(model.rest_shape, window=cfg.training.window)
    if name == "oracle":
        return None, OracleEstimator(seq, window=cfg.training.window)
    paths = _paths(cfg)
    if not paths["checkpoint"].exists():
        raise ConfigurationError(f"{paths['checkpoint']} not found; run 'train' first")
    sen = checkpoint.load(paths["checkpoint"])
    if paths["history"].exists():
        trained_for = cio.read_json(paths["history"]).get("colon_digest")
        if trained_for != cio.load_colon(paths["colon"])[2]:
            raise ConfigurationError("checkpoint was trained against a different colon model")
    return sen, None


def cmd_track(cfg, estimator=None):
    name = estimator or cfg.tracking.estimator
    model, markers, colon_digest = _load_colon(cfg)
    out_dir = _paths(cfg)["out"] / "tracks" / name
    _mkdir(out_dir)
    written = []
    sen = None
    for path, header, seq in _load_sequences(cfg, "eval", colon_digest, markers):
        if name == "sen" and sen is None:
            sen, _ = _estimator_for(cfg, name, model, seq)
        if sen is not None and seq.frames and seq.frames[0].colon_truth.m != sen.meta.m:
            raise ConfigurationError(
                f"model estimates {sen.meta.m} colon points but {path.name} has "
                f"{seq.frames[0].colon_truth.m}"
            )
        est = None if name == "sen" else _estimator_for(cfg, name, model, seq)[1]
        transform = _register(cfg, model, seq)
        state = tracker_init(
            sen if name == "sen" else None,
            model.rest_shape,
            transform,
            estimator=est,
            reregister_target=icp_target(model) if cfg.tracking.reregister_each_frame else None,
            icp_params=cfg.icp_params(),
        )
        estimates = run_sequence(state, seq)
        track_header = {
            "estimator": name,
            "colon_digest": colon_digest,
            "sequence": path.name,
            "sequence_digest": cio.digest(header),
            "registration": {
                "rotation": transform.rotation.tolist(),
                "translation": transform.translation.tolist(),
            },
        }
        target = out_dir / path.name
        cio.write_estimates(target, estimates, track_header)
        written.append(target)
    return written


@dataclass(frozen=True)
class _Tracked:
    position: np.ndarray


def cmd_eval(cfg, estimator=None):
    name = estimator or cfg.tracking.estimator
    model, markers, colon_digest = _load_colon(cfg)
    track_dir = _paths(cfg)["out"] / "tracks" / name
    runs = []
    for path, header, seq in _load_sequences(cfg, "eval", colon_digest, markers):
        track_path = track_dir / path.name
        if not track_path.exists():
            raise ConfigurationError(f"{track_path} not found; run 'track' first")
        track_header, rows = cio.read_estimates(track_path)
        cio.check_digest(track_header, colon_digest, "colon.json", track_path)
        if track_header.get("sequence_digest") != cio.digest(header):
            raise ConfigurationError(f"{track_path} was produced from a different {path.name}")
        estimates = [_Tracked(np.asarray(r["pos"], dtype=float)) for r in rows]
        runs.append(marker_errors(estimates, seq.tip_arclengths, markers, model))
    out_dir = _paths(cfg)["out"] / "eval" / name
    _mkdir(out_dir)
    data = {
        "estimator": name,
        "colon_digest": colon_digest,
        "config_digest": cfg.digest(),
        "runs": [[asdict(e) for e in run] for run in runs],
    }
    cio.write_json(out_dir / "errors.json", data)
    return runs


def cmd_report(cfg, estimator=None):
    name = estimator or cfg.tracking.estimator
    out = _paths(cfg)["out"]
    errors_path = out / "eval" / name / "errors.json"
    if not errors_path.exists():
        raise ConfigurationError(f"{errors_path} not found; run 'eval' first")
    data = cio.read_json(errors_path)
    runs = [[MarkerError(**e) for e in run] for run in data["runs"]]
    report = aggregate(runs, config_digest=data["config_digest"])
    out_dir = out / "report" / name
    _mkdir(out_dir)
    for suffix, text in (("json", report.to_json()), ("csv", report.to_csv()), ("txt", report.to_table())):
        path = out_dir / f"report.{suffix}"
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc.strerror}") from exc
    return report


def cmd_run(cfg):
    """Every stage in order; with ``compare_rigid`` the rigid baseline is evaluated too."""
    cmd_simulate(cfg)
    names = [cfg.tracking.estimator]
    if cfg.tracking.compare_rigid and "rigid" not in names:
        names.append("rigid")
    if "sen" in names:
        cmd_train(cfg)
    reports = {}
    for name in names:
        cmd_track(cfg, name)
        cmd_eval(cfg, name)
        reports[name] = cmd_report(cfg, name)
    return reports


# ---------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_CODES["usage"], f"error: usage: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults to <out>/config.json when present)")
    common.add_argument("--seed", type=int, help="colon and run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--train-runs", type=int)
    sim.add_argument("--eval-runs", type=int)
    sim.add_argument("--frames", type=int)
    sim.add_argument("--noise-mm", type=float)
    trn = argparse.ArgumentParser(add_help=False)
    trn.add_argument("--epochs", type=int)
    trn.add_argument("--learning-rate", type=float)
    trn.add_argument("--batch-size", type=int)
    trn.add_argument("--train-seed", type=int)
    trk = argparse.ArgumentParser(add_help=False)
    trk.add_argument("--estimator", choices=ESTIMATORS)

    parser = _Parser(prog="colontrack", description="Deformation-aware colonoscope tracking pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common, sim], help="write the colon model and sequences")
    sub.add_parser("train", parents=[common, sim, trn], help="train the shape estimation network")
    sub.add_parser("track", parents=[common, sim, trk], help="track the evaluation sequences")
    sub.add_parser("eval", parents=[common, sim, trk], help="marker errors per evaluation run")
    sub.add_parser("report", parents=[common, trk], help="aggregate errors into JSON, CSV and a table")
    sub.add_parser("run", parents=[common, sim, trn, trk], help="all stages in order")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            for path in cmd_simulate(cfg):
                print(os.fspath(path))
        elif args.command == "train":
            _, history = cmd_train(cfg)
            print(f"best epoch {history.best_epoch}; checkpoint {_paths(cfg)['checkpoint']}")
        elif args.command == "track":
            for path in cmd_track(cfg):
                print(os.fspath(path))
        elif args.command == "eval":
            runs = cmd_eval(cfg)
            print(f"{len(runs)} run(s) evaluated")
        elif args.command == "report":
            sys.stdout.write(cmd_report(cfg).to_table())
        elif args.command == "run":
            for name, report in cmd_run(cfg).items():
                print(f"[{name}]")
                sys.stdout.write(report.to_table())
    except ColonTrackError as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
