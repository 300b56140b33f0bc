"""Command-line pipeline: ``python -m mirobid <stage> ...``.

Stages and the artifacts they write under the output root::

    gen                       data/      day files + manifest
    expert                    experts/   expert records + manifest
    train --algo A --seed N   train/A-seedN/   checkpoint, metrics stream, manifest
    eval --checkpoint DIR     DIR/eval-SPLIT.json (+ trajectories)
    report --runs DIR...      report/    report.json, report.csv, manifest
    act --checkpoint DIR --day ID      one trajectory as JSON lines

Exit statuses: 0 ok, 2 usage or config error, 3 missing upstream artifact,
4 runtime failure.  ``MIROBID_OUT`` and ``MIROBID_WORKERS`` provide defaults
for ``--out`` and ``--workers``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, canonical_json, config_hash, load_config
from .diffcore import CheckpointError, load_checkpoint, save_checkpoint
from .env import replay_actions, save_trajectories
from .io import DatasetError, file_sha256, load_dataset, save_dataset
from .market import dataset_digest, generate_dataset
from .metrics import DayScore, aggregate_report
from .oracle import expert_for_day, load_experts, save_experts
from .policy import CausalPolicy, PolicyConfig
from .training import ALGOS, LEARNED, PolicyTrainer, Workspace, evaluate_policy, run_baseline
from .worldmodel import WorldModel

EXIT_OK, EXIT_USAGE, EXIT_DEPENDENCY, EXIT_RUNTIME = 0, 2, 3, 4
SPLITS = ("test", "train", "test-iid", "test-ood", "all")


class UsageError(Exception):
    pass


class DependencyError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# manifests


def code_version():
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(p.relative_to(Path(__file__).parent).as_posix().encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_manifest(directory, stage, cfg, inputs, outputs, **extra):
    directory = Path(directory)
    write_json(directory / "config.json", cfg.to_dict())
    files = sorted(set(outputs) | {"config.json"})
    man = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "code_version": code_version(),
        "inputs": inputs,
        "outputs": {f: file_sha256(directory / f) for f in files},
        **extra,
    }
    write_json(directory / "manifest.json", man)
    return man


def read_manifest(directory, stage_name):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DependencyError(f"missing {stage_name} artifacts: {path} not found (run `{stage_name}` first)")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# shared loading


class Context:
    def __init__(self, args):
        self.root = Path(args.out)
        self.cfg = load_config(args.config, args.set or ())
        self.workers = max(1, int(args.workers))
        self.force = getattr(args, "force", False)

    @property
    def data_dir(self):
        return self.root / "data"

    @property
    def expert_dir(self):
        return self.root / "experts"

    def check_config(self, man, stage):
        if man["config_hash"] != config_hash(self.cfg) and not self.force:
            raise DependencyError(f"{stage} artifacts were produced with a different config "
                                  f"({man['config_hash'][:12]}); rerun `{stage}` or pass --force")

    def dataset(self):
        man = read_manifest(self.data_dir, "gen")
        return load_dataset(self.data_dir), man

    def workspace(self, seed):
        days, dman = self.dataset()
        eman = read_manifest(self.expert_dir, "expert")
        if eman["inputs"].get("dataset") != dman["dataset_digest"]:
            raise DependencyError("expert records do not match the dataset; rerun `expert`")
        records = {r.day_id: r for r in load_experts(self.expert_dir / "experts.json")}
        experts = {d.day_id: (records[d.day_id], replay_actions(d, records[d.day_id].ratios, tag="expert"))
                   for d in days}
        ws = Workspace(days, seed, experts, self.cfg.world_model)
        return ws, dman, eman

    def world_model(self, ws, seed):
        """Trained once per seed and shared by every learned method of that seed."""
        d = self.root / "worldmodel" / f"seed{seed}"
        path = d / "world_model.ckpt"
        wm = WorldModel(self.cfg.world_model, seed)
        if path.exists():
            man = read_manifest(d, "train")
            self.check_config(man, "world-model")
            _, meta = load_checkpoint(path, into=wm.params)
            wm.load_meta(meta)
        else:
            d.mkdir(parents=True, exist_ok=True)
            trained = ws.world_model
            meta = trained.meta()
            save_checkpoint(path, trained.params, meta)
            write_json(d / "log.json", ws.wm_trainer.log)
            write_manifest(d, "world-model", self.cfg, {"experts": file_sha256(self.expert_dir / "experts.json")},
                           ["world_model.ckpt", "log.json"], seed=seed)
            # every consumer sees the stored precision
            _, meta = load_checkpoint(path, into=wm.params)
            wm.load_meta(meta)
        ws.attach_world_model(wm)
        return wm


def select_days(ws, split):
    if split == "all":
        return list(ws.days)
    if split == "test":
        return ws.test_days
    out = [d for d in ws.days if d.split == split]
    if not out:
        raise UsageError(f"split {split!r} has no days")
    return out


# ---------------------------------------------------------------------------
# stages


def cmd_gen(ctx, args):
    cfg = ctx.cfg
    days = generate_dataset(cfg.generator)
    ctx.data_dir.mkdir(parents=True, exist_ok=True)
    for old in ctx.data_dir.glob("day_*"):
        old.unlink()
    paths = save_dataset(days, ctx.data_dir, cfg.data.format)
    digest = dataset_digest(days)
    write_manifest(ctx.data_dir, "gen", cfg, {}, [p.name for p in paths], dataset_digest=digest,
                   n_days=len(days))
    print(f"gen: {len(days)} days -> {ctx.data_dir} (dataset {digest[:12]})")


def _solve(args):
    day, K, method = args
    rec, _ = expert_for_day(day, K, method)
    return rec


def cmd_expert(ctx, args):
    days, dman = ctx.dataset()
    ctx.check_config(dman, "gen")
    jobs = [(d, ctx.cfg.expert.K, ctx.cfg.expert.method) for d in days]
    if ctx.workers > 1:
        with ProcessPoolExecutor(ctx.workers) as pool:
            records = list(pool.map(_solve, jobs))
    else:
        records = [_solve(j) for j in jobs]
    ctx.expert_dir.mkdir(parents=True, exist_ok=True)
    save_experts(ctx.expert_dir / "experts.json", records)
    flagged = [r.day_id for r in records if r.flagged]
    write_manifest(ctx.expert_dir, "expert", ctx.cfg, {"dataset": dman["dataset_digest"]}, ["experts.json"],
                   flagged_days=flagged)
    print(f"expert: {len(records)} days solved, {len(flagged)} flagged by replay")


def run_dir(ctx, algo, seed):
    return ctx.root / "train" / f"{algo}-seed{seed}"


def cmd_train(ctx, args):
    algo, seed = args.algo, args.seed
    ws, dman, eman = ctx.workspace(seed)
    out = run_dir(ctx, algo, seed)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"dataset": dman["dataset_digest"], "experts": eman["outputs"]["experts.json"]}
    if algo in LEARNED:
        ctx.world_model(ws, seed)  # attaches the float32 reload to ws
        inputs["world_model"] = file_sha256(ctx.root / "worldmodel" / f"seed{seed}" / "world_model.ckpt")
        state = out / "trainer.pkl"
        if args.resume and state.exists():
            trainer = PolicyTrainer.load_state(state)
            if trainer.method != algo or trainer.seed != seed:
                raise UsageError(f"{state} belongs to {trainer.method} seed {trainer.seed}")
        else:
            trainer = PolicyTrainer(algo, ws, seed, ctx.cfg.train_config())
        until = None if args.stop_after is None else trainer.it + args.stop_after
        trainer.run(until)
        with open(out / "metrics.jsonl", "w") as fh:
            for rec in trainer.stream:
                fh.write(canonical_json(rec) + "\n")
        if not trainer.done:
            trainer.save_state(state)
            print(f"train: {algo} seed {seed} paused at iteration {trainer.it}; resume with --resume")
            return
        if state.exists():
            state.unlink()
        meta = {"algo": algo, "seed": seed, "policy": trainer.policy.cfg.to_dict(), "iters": trainer.it}
        save_checkpoint(out / "policy.ckpt", trainer.policy.params, meta)
        outputs = ["policy.ckpt", "metrics.jsonl"]
    else:
        params = {"pid": ctx.cfg.pid, "cem": ctx.cfg.cem}[algo]
        write_json(out / "baseline.json", {"algo": algo, "seed": seed, "params": params.__dict__})
        outputs = ["baseline.json"]
    write_manifest(out, "train", ctx.cfg, inputs, outputs, algo=algo, seed=seed)
    print(f"train: {algo} seed {seed} -> {out}")


def load_run(directory):
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    man = read_manifest(directory, "train")
    if man.get("stage") != "train":
        raise UsageError(f"{directory} is not a training run")
    return directory, man


def run_policy(ctx, directory, man, ws, days):
    algo, seed = man["algo"], man["seed"]
    if algo in LEARNED:
        params, meta = load_checkpoint(directory / "policy.ckpt")
        policy = CausalPolicy(PolicyConfig(**meta["policy"]), seed)
        load_checkpoint(directory / "policy.ckpt", into=policy.params)
        return evaluate_policy(policy, days, ws.u_star)
    spec = json.loads((directory / "baseline.json").read_text())
    kw = {algo: spec["params"]}
    return run_baseline(algo, ws, seed, days, **kw)


def cmd_eval(ctx, args):
    directory, man = load_run(args.checkpoint)
    ws, dman, _ = ctx.workspace(man["seed"])
    if man["inputs"]["dataset"] != dman["dataset_digest"]:
        raise DependencyError(f"{directory} was trained on a different dataset; retrain")
    days = select_days(ws, args.split)
    trajs, scores = run_policy(ctx, directory, man, ws, days)
    mcfg = ctx.cfg.metrics
    rep = aggregate_report([(man["algo"], scores)], mcfg)
    by_id = {d.day_id: d for d in days}
    result = {
        "algo": man["algo"], "seed": man["seed"], "split": args.split,
        "config_hash": config_hash(ctx.cfg), "dataset": dman["dataset_digest"],
        "run_manifest": file_sha256(directory / "manifest.json"),
        "days": [{**s.to_dict(mcfg), "day_digest": by_id[s.day_id].digest()} for s in scores],
        "summary": rep.summary(),
    }
    write_json(directory / f"eval-{args.split}.json", result)
    save_trajectories(directory / f"eval-{args.split}-traj.jsonl", trajs)
    row = [r for r in rep.summary() if r["group"] == "all"]
    value = f"{row[0]['mTACR']:.4f}" if row else "n/a"
    print(f"eval: {man['algo']} seed {man['seed']} on {args.split}: TACR {value}")


def _collect_runs(paths):
    out = []
    for p in paths:
        p = Path(p)
        if (p / "manifest.json").exists() and json.loads((p / "manifest.json").read_text()).get("stage") == "train":
            out.append(p)
        else:
            found = sorted(m.parent for m in p.glob("*/manifest.json"))
            if not found and not p.exists():
                raise DependencyError(f"{p} does not exist")
            out.extend(d for d in found if json.loads((d / "manifest.json").read_text()).get("stage") == "train")
    return out


def day_score(rec):
    return DayScore(rec["day_id"], rec["split"], rec["mechanism"], rec["U"], rec["U_star"], rec["cost"],
                    rec["L"], rec["B"])


def cmd_report(ctx, args):
    dirs = _collect_runs(args.runs)
    if not dirs:
        raise DependencyError("no training runs found under " + " ".join(args.runs))
    runs, hashes, datasets, day_sets = [], set(), set(), set()
    for d in dirs:
        path = d / f"eval-{args.split}.json"
        if not path.exists():
            raise DependencyError(f"{path} not found (run `eval --checkpoint {d} --split {args.split}`)")
        ev = json.loads(path.read_text())
        hashes.add(ev["config_hash"])
        datasets.add(ev["dataset"])
        day_sets.add(tuple(sorted((r["day_id"], r["day_digest"]) for r in ev["days"])))
        runs.append((ev["algo"], ev["seed"], [day_score(r) for r in ev["days"]], path))
    problems = []
    if len(hashes) > 1:
        problems.append(f"{len(hashes)} different config hashes")
    if len(datasets) > 1:
        problems.append(f"{len(datasets)} different datasets")
    if len(day_sets) > 1:
        problems.append("runs were evaluated on different days")
    if problems and not args.force:
        raise UsageError("refusing to mix inputs (" + "; ".join(problems) + "); pass --force to override")
    runs.sort(key=lambda r: (r[0], r[1]))
    rep = aggregate_report([(a, s) for a, _, s, _ in runs], ctx.cfg.metrics)
    out = Path(args.report_dir) if args.report_dir else ctx.root / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "report.csv").write_text(rep.to_csv())
    inputs = {f"{a}-seed{s}": file_sha256(p) for a, s, _, p in runs}
    write_manifest(out, "report", ctx.cfg, inputs, ["report.json", "report.csv"], split=args.split,
                   mixed=bool(problems))
    for row in rep.summary():
        if row["group"] == "all":
            print(f"{row['method']:>8}  runs {row['runs']}  mTACR {row['mTACR']:.4f}  "
                  f"mCR@gamma {row['mCR_at_gamma']:.4f}")


def cmd_act(ctx, args):
    directory, man = load_run(args.checkpoint)
    ws, _, _ = ctx.workspace(man["seed"])
    days = [d for d in ws.days if d.day_id == args.day]
    if not days:
        raise UsageError(f"no day with id {args.day}")
    trajs, _ = run_policy(ctx, directory, man, ws, days)
    target = Path(args.dump) if args.dump else None
    if target:
        save_trajectories(target, trajs)
    else:
        for rec in trajs[0].to_records():
            sys.stdout.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="mirobid", description="Synthetic auto-bidding pipeline")
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                   help="override one config field (repeatable)")
    p.add_argument("--out", default=os.environ.get("MIROBID_OUT", "runs"), help="output root")
    p.add_argument("--workers", type=int, default=int(os.environ.get("MIROBID_WORKERS", "1")))
    p.add_argument("--force", action="store_true", help="accept artifacts made with another config")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("gen", help="generate the synthetic dataset")
    sub.add_parser("expert", help="solve the hindsight expert for every day")
    t = sub.add_parser("train", help="train one method for one seed")
    t.add_argument("--algo", required=True, choices=ALGOS)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", action="store_true", help="continue a paused run")
    t.add_argument("--stop-after", type=int, help="pause after this many iterations")
    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    r = sub.add_parser("report", help="aggregate evaluated runs")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--split", default="test", choices=SPLITS)
    r.add_argument("--report-dir")
    r.add_argument("--force", action="store_true", help="allow mixed config or dataset hashes")
    a = sub.add_parser("act", help="dump one trajectory of a trained run")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--day", type=int, required=True)
    a.add_argument("--dump", help="write JSON lines here instead of stdout")
    return p


COMMANDS = {"gen": cmd_gen, "expert": cmd_expert, "train": cmd_train, "eval": cmd_eval, "report": cmd_report,
            "act": cmd_act}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        ctx = Context(args)
        COMMANDS[args.command](ctx, args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (DatasetError, CheckpointError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
