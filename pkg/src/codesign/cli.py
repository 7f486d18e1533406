"""Command-line entry point: pareto, fit, train, eval, finalize, pipeline, genmap.

Every command is deterministic given its inputs and seed.  Failures exit
nonzero after printing one JSON line on stdout; the traceback goes to stderr.
Log verbosity comes from the CODESIGN_LOG_LEVEL environment variable.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .errors import DomainError, InfeasibleError
from .finalize import PsoConfig, finalize_morphology
from .morphology import DEFAULT_MODEL, MorphologyModel, TalentVector
from .pareto import MooConfig, ParetoSet, nsga2_run
from .sim import MapFormatError, generate_map, generate_scenario
from .surface import TalentSurface, fit_talent_surface
from .trainer import (
    EvalMetrics, ScenarioPool, TrainConfig, TrainingError, evaluate, load_checkpoint, train,
)

log = logging.getLogger("codesign")

SCHEMA_VERSION = 1
BASELINE_RANGE = 5000.0  # m, range of the fixed-design baseline
EVAL_FIELDS = ("policy", "mode", "episodes", "success_rate", "mean_reward", "mean_completion_time", "survival_rate")
EPISODE_FIELDS = ("episode", "scenario", "reward", "success", "elapsed", "surviving",
                  "search_speed", "cruising_speed", "flight_range")
EXIT_CODES = {DomainError: 2, MapFormatError: 2, FileNotFoundError: 2, json.JSONDecodeError: 2,
              InfeasibleError: 3, TrainingError: 4}


class ConfigError(DomainError):
    pass


def bundled_config() -> Path:
    """Path of the tiny pipeline config shipped with the package."""
    return Path(str(resources.files("codesign") / "data" / "tiny" / "pipeline.json"))


def _build(cls, data: dict | None, what: str):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs.

    Input paths resolve against the config file's directory; ``out_dir``
    resolves against the working directory.
    """

    map: Path | None = None
    scenarios: list[Path] = field(default_factory=list)
    morphology: Path | None = None
    moo: dict = field(default_factory=dict)
    surface_degree: int = 2
    train: dict = field(default_factory=dict)
    pso: dict = field(default_factory=dict)
    eval_episodes: int = 250
    eval_mode: str = "sample"
    out_dir: Path = Path("codesign-run")
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        data = json.loads(path.read_text())
        data.pop("schema_version", None)
        cfg = _build(cls, data, "pipeline config")
        base = path.parent
        cfg.map = base / cfg.map if cfg.map is not None else None
        cfg.scenarios = [base / p for p in cfg.scenarios]
        cfg.morphology = base / cfg.morphology if cfg.morphology is not None else None
        cfg.out_dir = Path(cfg.out_dir)  # relative to the working directory, not the config
        return cfg

    def validate(self) -> None:
        for p in [self.map, self.morphology, *self.scenarios]:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"referenced file does not exist: {p}")
        if self.map is not None and not self.scenarios:
            raise ConfigError("a map needs at least one scenario file")
        if self.surface_degree < 1:
            raise ConfigError("surface_degree must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.eval_mode not in ("sample", "deterministic"):
            raise ConfigError(f"eval_mode must be 'sample' or 'deterministic', got {self.eval_mode!r}")
        self.moo_config()
        self.train_config()
        self.pso_config()

    # the global seed sets every stage's seed
    def moo_config(self) -> MooConfig:
        return _build(MooConfig, {**self.moo, "seed": self.seed}, "moo")

    def train_config(self, workers: int | None = None) -> TrainConfig:
        extra = {"seed": self.seed} if workers is None else {"seed": self.seed, "workers": workers}
        return TrainConfig.from_dict({**self.train, **extra})

    def pso_config(self) -> PsoConfig:
        return _build(PsoConfig, {**self.pso, "seed": self.seed}, "pso")

    def model(self) -> MorphologyModel:
        return MorphologyModel.load(self.morphology) if self.morphology is not None else DEFAULT_MODEL

    def pool(self) -> ScenarioPool:
        if self.map is None:
            raise ConfigError("config has no map / scenario files")
        return ScenarioPool.from_files(self.map, self.scenarios)

    def describe(self) -> dict:
        return {
            "map": None if self.map is None else Path(self.map).name,
            "scenarios": [Path(p).name for p in self.scenarios],
            "moo": dataclasses.asdict(self.moo_config()),
            "surface_degree": self.surface_degree,
            "train": dataclasses.asdict(self.train_config()),
            "pso": dataclasses.asdict(self.pso_config()),
            "eval_episodes": self.eval_episodes,
            "eval_mode": self.eval_mode,
            "seed": self.seed,
        }


def parse_talents(text: str) -> TalentVector:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise DomainError(f"talents must be three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3 or not all(math.isfinite(v) and v > 0 for v in vals):
        raise DomainError(f"talents must be three positive numbers, got {text!r}")
    return TalentVector(*vals)


def baseline_talents(pareto: ParetoSet, seed: int = 0, range_m: float = BASELINE_RANGE,
                     tol: float = 0.1) -> TalentVector:
    """A random Pareto point whose range is within ``tol`` of ``range_m``; the closest point if none is."""
    r = pareto.talents[:, 2]
    near = np.flatnonzero(np.abs(r - range_m) <= tol * range_m)
    if len(near) == 0:
        near = np.array([int(np.argmin(np.abs(r - range_m)))])
    i = int(np.random.default_rng(seed).choice(near))
    return TalentVector.from_array(pareto.talents[i])


# -- writers ---------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_json(path: Path, body: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **body}, indent=2, sort_keys=True) + "\n")


# -- commands --------------------------------------------------------------------

def cmd_pareto(cfg: PipelineConfig, out: Path) -> Path:
    moo = cfg.moo_config()
    pareto = nsga2_run(moo, cfg.model())
    path = out / "pareto.csv"
    pareto.save(path, metadata={"seed": moo.seed, "runs": moo.runs, "points": len(pareto)})
    log.info("pareto: %d points -> %s", len(pareto), path)
    return path


def cmd_fit(pareto_path, degree: int, out: Path) -> Path:
    surface = fit_talent_surface(ParetoSet.load(pareto_path), degree=degree)
    path = out / "surface.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    surface.save(path)
    log.info("fit: degree %d surface -> %s (surrogate rms %.4g)", degree, path, surface.surrogate_rms)
    return path


def cmd_train(cfg: PipelineConfig, surface_path, out: Path, fixed: TalentVector | None = None,
              workers: int | None = None, resume=None) -> Path:
    surface = TalentSurface.load(surface_path) if surface_path is not None else None
    result = train(cfg.train_config(workers), cfg.pool(), surface, out, fixed_talents=fixed, resume=resume)
    log.info("train: %d episodes -> %s", len(result.history), result.checkpoint)
    return result.checkpoint


def _policy_talents(policy, surface: TalentSurface) -> TalentVector:
    with torch.no_grad():
        raw = policy.talent_mean().numpy()
    return TalentVector.from_array(surface.decode(raw))


def cmd_eval(cfg: PipelineConfig, checkpoint, surface_path, mode: str, out: Path, episodes: int | None = None,
             policy_mode: str | None = None, workers: int = 1) -> EvalMetrics:
    """``checkpoint`` may be 'random'; ``mode`` is 'codesign' or 'fixed[:s,v,r]'."""
    episodes = episodes or cfg.eval_episodes
    policy_mode = policy_mode or cfg.eval_mode
    surface = TalentSurface.load(surface_path) if surface_path is not None else None
    fixed = None
    if checkpoint == "random":
        policy, label = "random", "random"
    else:
        policy, extra = load_checkpoint(checkpoint)
        label = Path(checkpoint).name
    if mode.startswith("fixed"):
        _, _, triple = mode.partition(":")
        if triple:
            fixed = parse_talents(triple)
        elif checkpoint != "random" and extra.get("fixed_talents"):
            fixed = TalentVector(*extra["fixed_talents"])
        else:
            raise DomainError("fixed mode needs a talent triple (fixed:s,v,r) or a fixed-design checkpoint")
    elif mode == "codesign":
        if policy != "random" and not policy.codesign:
            raise DomainError("codesign mode needs a co-design checkpoint; use fixed:s,v,r")
        if surface is None:
            raise DomainError("codesign mode needs a talent surface")
    else:
        raise DomainError(f"unknown eval mode {mode!r}; expected 'codesign' or 'fixed:s,v,r'")
    if fixed is not None and policy != "random" and policy.codesign:
        raise DomainError("a co-design checkpoint cannot be evaluated with fixed talents")
    metrics, eps = evaluate(policy, cfg.pool(), surface, episodes, seed=cfg.seed, mode=policy_mode,
                            fixed_talents=fixed, workers=workers)
    row = metrics.as_row()
    _write_csv(out / "metrics.csv", EVAL_FIELDS, [[label, mode] + [row[k] for k in EVAL_FIELDS[2:]]])
    _write_csv(out / "episodes.csv", EPISODE_FIELDS,
               [[e.index, e.scenario, e.reward, e.success, e.elapsed, e.surviving, *e.talents] for e in eps])
    log.info("eval %s (%s): success %.3f, mean reward %.3f", label, mode, metrics.success_rate, metrics.mean_reward)
    return metrics


def cmd_finalize(cfg: PipelineConfig, out: Path, talents: TalentVector | None = None, checkpoint=None,
                 surface_path=None):
    model = cfg.model()
    spread = None
    surface = TalentSurface.load(surface_path) if surface_path is not None else None
    if surface is not None:
        spread = np.asarray(surface.talent_max) - np.asarray(surface.talent_min)
    if talents is None:
        if checkpoint is None or surface is None:
            raise DomainError("finalize needs --talents or both --checkpoint and --surface")
        policy, _ = load_checkpoint(checkpoint)
        if not policy.codesign:
            raise DomainError("checkpoint is a fixed-design policy; it has no learned talents")
        talents = _policy_talents(policy, surface)
    result = finalize_morphology(talents, config=cfg.pso_config(), model=model, spread=spread)
    result.save(out / "design.json", out / "pso_history.csv",
                metadata={"target": talents.to_array().tolist(), "seed": cfg.pso_config().seed})
    log.info("finalize: residual %.4g -> %s", result.residual, out / "design.json")
    return result


def cmd_genmap(seed: int, out: Path, rows: int = 3, cols: int = 3, buildings: int = 7, scenarios: int = 8,
               targets: tuple[int, int] = (5, 7), time_limit: float = 500.0) -> list[Path]:
    g = generate_map(seed, rows=rows, cols=cols, n_buildings=buildings)
    out.mkdir(parents=True, exist_ok=True)
    g.save(out / "map.txt")
    paths = [out / "map.txt"]
    for s in range(scenarios):
        sc = generate_scenario(g, seed * 1000 + s, n_targets=targets, time_limit=time_limit, name=f"s{s}")
        p = out / "scenarios" / f"s{s}.txt"
        p.parent.mkdir(parents=True, exist_ok=True)
        sc.save(p)
        paths.append(p)
    return paths


def cmd_pipeline(cfg: PipelineConfig, out: Path | None = None, workers: int | None = None) -> dict:
    """pareto -> fit -> train -> finalize, then evaluate the trained policy."""
    cfg.validate()
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pareto_path = cmd_pareto(cfg, out / "pareto")
    surface_path = cmd_fit(pareto_path, cfg.surface_degree, out / "surface")
    ckpt = cmd_train(cfg, surface_path, out / "train", workers=workers)
    result = cmd_finalize(cfg, out / "finalize", checkpoint=ckpt, surface_path=surface_path)
    metrics = cmd_eval(cfg, ckpt, surface_path, "codesign", out / "eval", workers=workers or 1)
    summary = {
        "config": cfg.describe(),
        "talents": result.talents.to_array().tolist(),
        "residual": result.residual,
        "eval": metrics.as_row(),
        "files": sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()),
    }
    _write_json(out / "summary.json", summary)
    return summary


# -- argument parsing ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codesign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="pipeline config JSON (default: bundled tiny suite)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--workers", type=int, help="rollout worker processes")
        return sp

    common(sub.add_parser("pareto", help="run NSGA-II and write the talent Pareto set"))
    sp = common(sub.add_parser("fit", help="fit quantile talent bounds to a Pareto set"), config=False)
    sp.add_argument("--pareto", type=Path, required=True)
    sp.add_argument("--degree", type=int, default=2)
    sp = common(sub.add_parser("train", help="train a co-design or fixed-design policy"))
    sp.add_argument("--surface", type=Path)
    sp.add_argument("--fixed", help="fixed talents s,v,r (search speed, cruise speed, range)")
    sp.add_argument("--resume", type=Path, help="checkpoint to continue from")
    sp = common(sub.add_parser("eval", help="evaluate a checkpoint or the random baseline"))
    sp.add_argument("--checkpoint", required=True, help="checkpoint path or 'random'")
    sp.add_argument("--surface", type=Path)
    sp.add_argument("--mode", default="codesign", help="'codesign' or 'fixed:s,v,r'")
    sp.add_argument("--episodes", type=int, default=None, help="default: eval_episodes in the config (250)")
    sp.add_argument("--policy-mode", choices=("sample", "deterministic"), default=None)
    sp = common(sub.add_parser("finalize", help="recover a design for learned or given talents"))
    sp.add_argument("--talents", help="target talents s,v,r")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--surface", type=Path)
    common(sub.add_parser("pipeline", help="run every stage in sequence"))
    sp = common(sub.add_parser("genmap", help="generate a map and scenario files"), config=False)
    sp.add_argument("--rows", type=int, default=3)
    sp.add_argument("--cols", type=int, default=3)
    sp.add_argument("--buildings", type=int, default=7)
    sp.add_argument("--scenarios", type=int, default=8)
    sp.add_argument("--time-limit", type=float, default=500.0)
    return p


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config or bundled_config())
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    # one intra-op thread keeps float reductions, and so every output file, reproducible
    torch.set_num_threads(1)
    cmd = args.command
    if cmd == "genmap":
        paths = cmd_genmap(args.seed or 0, args.out or Path("."), args.rows, args.cols, args.buildings,
                           args.scenarios, time_limit=args.time_limit)
        print(json.dumps({"files": [str(p) for p in paths]}))
        return 0
    if cmd == "fit":
        print(json.dumps({"surface": str(cmd_fit(args.pareto, args.degree, args.out or Path(".")))}))
        return 0
    cfg = _load_config(args)
    out = args.out or cfg.out_dir
    if cmd == "pareto":
        print(json.dumps({"pareto": str(cmd_pareto(cfg, out))}))
    elif cmd == "train":
        fixed = parse_talents(args.fixed) if args.fixed else None
        if fixed is None and args.surface is None:
            raise DomainError("co-design training needs --surface (or pass --fixed s,v,r)")
        ckpt = cmd_train(cfg, args.surface, out, fixed, args.workers, args.resume)
        print(json.dumps({"checkpoint": str(ckpt)}))
    elif cmd == "eval":
        m = cmd_eval(cfg, args.checkpoint, args.surface, args.mode, out, args.episodes, args.policy_mode,
                     args.workers or 1)
        print(json.dumps(m.as_row()))
    elif cmd == "finalize":
        talents = parse_talents(args.talents) if args.talents else None
        r = cmd_finalize(cfg, out, talents, args.checkpoint, args.surface)
        print(json.dumps({"residual": r.residual, "talents": r.talents.to_array().tolist()}))
    elif cmd == "pipeline":
        s = cmd_pipeline(cfg, out, args.workers)
        print(json.dumps({"residual": s["residual"], "eval": s["eval"]}))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CODESIGN_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(argv)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}))
        traceback.print_exc(file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
