"""Run-directory orchestration for the BC, DAgger and evaluation stages.

A run directory holds everything a stage produced plus ``manifest.json``,
which lists every artifact with its sha256 so a later stage (or a resumed
DAgger run) can pick up exactly where the last one stopped.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, dump_config, from_dict, to_dict
from .errors import ChecksumError, ConfigError, InvalidArgument
from .evaluation import rollout_metrics, summarize, write_metrics_csv, write_summary_csv
from .imitation import (ConstantController, Dataset, DatasetEntry, ExpertController,
                        LearnerController, alternating_sides, collect_bc, dagger_iteration,
                        read_rollout_csv, run_batch, write_rollout_csv)
from .policy import load, save, train, write_history_csv
from .seeding import child_seed

log = logging.getLogger("fishformation")

MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """A run directory and its manifest."""

    def __init__(self, root, cfg: ExperimentConfig, manifest: dict | None = None):
        self.root = Path(root)
        self.cfg = cfg
        self.manifest = manifest or {"tool": "fishformation", "version": __version__,
                                     "created": _now(), "config": to_dict(cfg),
                                     "dataset": [], "checkpoints": [], "metrics": [],
                                     "figures": []}

    @classmethod
    def create(cls, root, cfg: ExperimentConfig) -> "Run":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.yaml").write_text(dump_config(cfg))
        run = cls(root, cfg)
        run.save()
        return run

    @classmethod
    def open(cls, root) -> "Run":
        """Load a manifest and verify every file it references."""
        root = Path(root)
        path = root / MANIFEST
        if not path.exists():
            raise ConfigError(f"no {MANIFEST} in {root}")
        manifest = json.loads(path.read_text())
        for section in ("dataset", "checkpoints", "metrics", "figures"):
            for item in manifest.get(section, []):
                f = root / item["file"]
                if not f.exists():
                    raise ChecksumError(f"{f}: referenced by the manifest but missing")
                if sha256_file(f) != item["sha256"]:
                    raise ChecksumError(f"{f}: checksum does not match the manifest")
        return cls(root, from_dict(manifest["config"]), manifest)

    def save(self) -> None:
        self.manifest["updated"] = _now()
        (self.root / MANIFEST).write_text(json.dumps(self.manifest, indent=1))

    def record(self, section: str, path: Path, **info) -> dict:
        item = {"file": str(path.relative_to(self.root)), "sha256": sha256_file(path), **info}
        self.manifest[section].append(item)
        return item

    def dataset(self) -> Dataset:
        entries = []
        for item in self.manifest["dataset"]:
            r = read_rollout_csv(self.root / item["file"], item["seed"], item["side"],
                                 item["termination"])
            entries.append(DatasetEntry(r, item["iteration"], item["stage"]))
        return Dataset(entries)

    def checkpoint(self, index: int = -1):
        cps = self.manifest["checkpoints"]
        if not cps:
            raise InvalidArgument("the run has no checkpoints yet")
        return load(self.root / cps[index]["file"])


def _write_rollouts(run: Run, subdir: str, rollouts, iteration: int, stage: str) -> Path:
    d = run.root / subdir / "rollouts"
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    offset = len(run.manifest["dataset"])
    for i, r in enumerate(rollouts):
        path = d / f"rollout_{offset + i:03d}.csv"
        write_rollout_csv(path, r)
        run.record("dataset", path, seed=r.seed, side=r.side, termination=r.termination,
                   iteration=iteration, stage=stage, n_frames=len(r))
        rows.append((path.stem, stage if stage == "bc" else f"dagger_{iteration}", r.side,
                     rollout_metrics(r, run.cfg.reward)))
    metrics = run.root / subdir / "metrics.csv"
    write_metrics_csv(metrics, rows)
    run.record("metrics", metrics, stage=stage, iteration=iteration)
    _write_dataset_manifest(run)
    return metrics


def _write_dataset_manifest(run: Run) -> None:
    with open(run.root / "dataset_manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "file", "iteration", "stage", "seed", "side", "termination",
                    "n_frames"])
        for i, item in enumerate(run.manifest["dataset"]):
            w.writerow([i, item["file"], item["iteration"], item["stage"], item["seed"],
                        item["side"], item["termination"], item["n_frames"]])


def _train_and_save(run: Run, dataset: Dataset, iteration: int) -> None:
    cfg = run.cfg
    tcfg = dataclasses.replace(cfg.train, seed=child_seed(cfg.seed, "train", iteration))
    log.info("training policy %d on %d rollouts for %d epochs", iteration, len(dataset),
             tcfg.epochs)
    result = train(dataset.sequences(), cfg.net, tcfg)
    cdir = run.root / "checkpoints"
    hdir = run.root / "training"
    cdir.mkdir(exist_ok=True)
    hdir.mkdir(exist_ok=True)
    ckpt = cdir / f"policy_{iteration:02d}.ckpt"
    save(result.params, result.stats, ckpt)
    hist = hdir / f"history_{iteration:02d}.csv"
    write_history_csv(hist, result.history)
    run.record("metrics", hist, stage="training", iteration=iteration)
    run.record("checkpoints", ckpt, iteration=iteration, n_rollouts=len(dataset),
               best_epoch=result.best_epoch, best_val_loss=result.best_val_loss,
               train_rollouts=result.train_idx, val_rollouts=result.val_idx,
               degenerate_channels=list(result.stats.degenerate))
    log.info("policy %d: best epoch %d, validation loss %.4g", iteration, result.best_epoch,
             result.best_val_loss)


def stage_bc(run: Run, threads: int = 1) -> None:
    """Collect expert demonstrations and train policy 0."""
    if run.manifest["dataset"]:
        raise InvalidArgument(f"{run.root} already holds a dataset; use a fresh directory")
    cfg = run.cfg
    n = cfg.protocol.bc_rollouts
    seeds = [child_seed(cfg.seed, "bc", i) for i in range(n)]
    log.info("collecting %d demonstrations", n)
    dataset = collect_bc(n, seeds, cfg.protocol_config(), threads)
    _write_rollouts(run, "bc", dataset.rollouts, 0, "bc")
    _train_and_save(run, dataset, 0)
    run.save()


def stage_dagger(run: Run, iterations: int | None = None, threads: int = 1) -> None:
    """Continue DAgger from the run's latest checkpoint and dataset."""
    cfg = run.cfg
    dataset = run.dataset()
    if not run.manifest["checkpoints"]:
        raise InvalidArgument("DAgger needs a trained policy; run the bc stage first")
    iterations = cfg.protocol.dagger_iterations if iterations is None else iterations
    n = cfg.protocol.dagger_rollouts
    for _ in range(iterations):
        params, stats = run.checkpoint(-1)
        k = dataset.last_iteration + 1
        seeds = [child_seed(cfg.seed, "dagger", k, i) for i in range(n)]
        log.info("DAgger iteration %d: %d learner rollouts", k, n)
        before = len(dataset)
        dataset = dagger_iteration(params, stats, n, dataset, seeds, cfg.protocol_config(),
                                   threads)
        _write_rollouts(run, f"dagger/iter_{k:02d}", dataset.rollouts[before:], k, "dagger")
        _train_and_save(run, dataset, k)
        run.save()


def _controller_factory(run: Run, name: str):
    if name == "expert":
        return ExpertController
    if name == "none":
        return lambda: ConstantController(0.0)
    for item in run.manifest["checkpoints"]:
        if Path(item["file"]).stem == name or item["file"] == name:
            params, stats = load(run.root / item["file"])
            return lambda: LearnerController(params, stats, name)
    path = Path(name)
    if path.suffix == ".ckpt" and path.exists():
        params, stats = load(path)
        return lambda: LearnerController(params, stats, path.stem)
    raise ConfigError(f"unknown policy {name!r} (expected expert, none, a checkpoint name "
                      f"or a .ckpt path)")


def default_policies(run: Run) -> list:
    return ["none"] + [Path(c["file"]).stem for c in run.manifest["checkpoints"]] + ["expert"]


def stage_eval(run: Run, policies=None, n: int | None = None, threads: int = 1,
               figures: bool = True) -> dict:
    """Evaluate policies on a shared set of seeds; returns metrics per policy."""
    cfg = run.cfg
    policies = list(policies) if policies else default_policies(run)
    n = cfg.protocol.eval_rollouts if n is None else n
    if n < 1:
        raise ConfigError("need at least one evaluation rollout")
    factories = {p: _controller_factory(run, p) for p in policies}
    seeds = [child_seed(cfg.seed, "eval", i) for i in range(n)]
    sides = alternating_sides(n)
    edir = run.root / "eval"
    (edir / "rollouts").mkdir(parents=True, exist_ok=True)
    rows, by_policy, rollouts = [], {}, {}
    for p in policies:
        log.info("evaluating %s on %d rollouts", p, n)
        rs = run_batch(factories[p], seeds, sides, cfg.protocol_config(), threads)
        rollouts[p] = rs
        by_policy[p] = []
        for i, r in enumerate(rs):
            m = rollout_metrics(r, cfg.reward)
            by_policy[p].append(m)
            rows.append((f"{p}_{i:03d}", p, r.side, m))
            write_rollout_csv(edir / "rollouts" / f"{p}_{i:03d}.csv", r)
    metrics = edir / "metrics.csv"
    write_metrics_csv(metrics, rows)
    summaries = summarize(by_policy)
    summary = edir / "summary.csv"
    write_summary_csv(summary, summaries)
    run.manifest["metrics"] = [m for m in run.manifest["metrics"]
                               if m.get("stage") != "eval"]
    run.record("metrics", metrics, stage="eval")
    run.record("metrics", summary, stage="eval")
    if figures:
        _eval_figures(run, policies, rollouts, summaries)
    run.save()
    return by_policy


def _eval_figures(run: Run, policies, rollouts, summaries) -> None:
    from .plotting import plot_learning_curve, plot_trajectories

    fdir = run.root / "figures"
    fdir.mkdir(exist_ok=True)
    run.manifest["figures"] = []
    for p in policies:
        path = fdir / f"trajectories_{p}.svg"
        plot_trajectories(path, rollouts[p][:4], run.cfg.tank, title=p)
        run.record("figures", path, policy=p)
    by_name = {s.policy: s for s in summaries}
    learners = [p for p in policies if p not in ("expert", "none")]
    if learners:
        def q(x):
            return (x.q25, x.median, x.q75)
        base = {b: (q(by_name[b].reward), q(by_name[b].mae)) for b in ("expert", "none")
                if b in by_name}
        path = fdir / "learning_curve.svg"
        plot_learning_curve(path, learners, [q(by_name[p].reward) for p in learners],
                            [q(by_name[p].mae) for p in learners], base)
        run.record("figures", path)
