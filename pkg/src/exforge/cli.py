"""``exforge`` command-line entry point.

Exit codes: 0 on success, 1 on invalid input or a failed verification,
2 when the oracle budget ran out before the command could finish.  Every
command writes a ``manifest.json`` next to its output holding the resolved
configuration, the seed and git-style blob hashes of all input and output
files.  Settings resolve as defaults < ``--config`` JSON < explicit flags;
``EXFORGE_SEED`` replaces the default seed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, jsonio
from .attack import AttackConfig, read_metrics_csv, run_attack, write_outputs
from .data import FAMILIES, Dataset, SyntheticSpec, generate, skew_classes
from .exceptions import BudgetExhausted, ExforgeError
from .oracle import OracleHandle, VictimModel, train_victim
from .presets import REFERENCE_SPECS, REFERENCE_TRAINING
from .surrogate import (BENCHMARK_COLUMNS, SurrogateConfig, benchmark_surrogates, distill,
                        standard_surrogates, sweep_lambda, write_csv)
from .zo import FwdDiffConfig

LOGIT_FLAGS = {"recovered": "recovered", "logprob": "log_prob", "true": "true_diagnostic"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def blob_hash(path) -> str:
    """Hash of a file's bytes as git computes it for a blob."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _hashes(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.name != "manifest.json":
                    out[str(f)] = blob_hash(f)
        elif p.is_file():
            out[str(p)] = blob_hash(p)
    return out


def write_manifest(out_dir, command: str, config: dict, seed, inputs, outputs) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "seed": seed, "config": config,
           "inputs": _hashes(inputs), "outputs": _hashes(outputs)}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _default_seed() -> int:
    return int(os.environ.get("EXFORGE_SEED", "0"))


def _out_dir(path) -> Path:
    p = Path(path)
    return p if p.suffix == "" else p.parent


def _load_victim_and_handle(spec: str, budget: int, strict: bool):
    """``spec`` is a victim checkpoint path or ``host:port``."""
    if Path(spec).exists():
        victim = VictimModel.load(spec)
        return victim, OracleHandle(victim, budget, strict=strict)
    from .wire import RemoteOracle
    return None, RemoteOracle.from_address(spec)


# ---------------------------------------------------------------- commands


def cmd_gen_data(a) -> int:
    d = a.d if a.d is not None else {"spirals": 2, "grid-digits": 36}.get(a.family, 2)
    spec = SyntheticSpec(a.family, a.n, d, a.k, a.sigma, a.seed)
    ds = generate(spec, a.split)
    if a.skew:
        ds = skew_classes(ds, range(a.skew))
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    ds.save(a.out)
    write_manifest(_out_dir(a.out), "gen-data", vars_clean(a), a.seed, [], [a.out])
    return 0


def cmd_train_victim(a) -> int:
    if a.preset:
        ds = generate(REFERENCE_SPECS[a.preset])
        params = dict(REFERENCE_TRAINING[a.preset])
        inputs = []
    else:
        ds = Dataset.load(a.data)
        params = {}
        inputs = [a.data]
    if a.epochs is not None:
        params["epochs"] = a.epochs
    if a.hidden is not None:
        params["hidden_layer_sizes"] = tuple(a.hidden)
    if a.wd is not None:
        params["weight_decay"] = a.wd
    params["learning_rate"] = a.lr
    params["random_state"] = a.seed
    victim = train_victim(ds, **params)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    victim.save(a.out)
    print(f"victim test accuracy {victim.test_accuracy:.4f}")
    write_manifest(_out_dir(a.out), "train-victim", vars_clean(a), a.seed, inputs, [a.out])
    return 0


def cmd_serve(a) -> int:
    from .wire import OracleServer
    victim = VictimModel.load(a.victim)
    server = OracleServer(OracleHandle(victim, a.budget, strict=True), a.host, a.port)
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def attack_config(a) -> AttackConfig:
    fwd = FwdDiffConfig(m=a.m, eps=a.eps, flip_probability=a.flip_prob, seed=a.seed)
    return AttackConfig(budget=a.budget, n_generator=a.ng, n_student=a.ns, batch_size=a.batch,
                        latent_dim=a.latent_dim, fwd=fwd, loss=a.loss,
                        logit_mode=LOGIT_FLAGS[a.logits], eval_every=a.eval_every,
                        diagnostics=a.diagnostics, seed=a.seed)


def cmd_attack(a) -> int:
    cfg = attack_config(a)
    victim, handle = _load_victim_and_handle(a.oracle, a.budget, strict=not (
        a.diagnostics or cfg.logit_mode == "true_diagnostic"))
    inputs = [p for p in (a.oracle, a.eval_data, a.init_student) if p and Path(p).exists()]
    if a.eval_data:
        ds = Dataset.load(a.eval_data)
        eval_set = (ds.inputs, ds.labels)
    elif victim is not None and victim.train_spec is not None:
        ts = victim.test_set()
        eval_set = (ts.inputs, ts.labels)
    else:
        eval_set = None
    student = None
    if a.init_student:
        from .nn import Network
        student = Network.load(a.init_student)
    result = run_attack(handle, cfg, eval_set, student)
    out = write_outputs(result, a.out)
    write_manifest(out, "attack", {**vars_clean(a), "attack": cfg.to_dict()}, a.seed, inputs,
                   [out / n for n in ("metrics.csv", "summary.json", "student.json",
                                      "generator.json")])
    f = result.final
    print(f"queries {f.queries_used}  accuracy {f.accuracy:.4f}  fidelity {f.fidelity:.4f}")
    return 0


def surrogate_config(a) -> SurrogateConfig:
    return SurrogateConfig(taus=tuple(a.taus), schedules=tuple(a.schedules), epochs=a.epochs,
                           cap=a.cap, lam_grid=tuple(a.lambdas), seed=a.seed)


def cmd_distill(a) -> int:
    victim = VictimModel.load(a.victim)
    ts = Dataset.load(a.eval_data) if a.eval_data else victim.test_set()
    eval_set = (ts.inputs, ts.labels)
    cfg = surrogate_config(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [a.victim] + ([a.eval_data] if a.eval_data else [])

    def factory():
        return OracleHandle(victim, a.budget)

    if a.benchmark:
        if victim.train_spec is None:
            raise ExforgeError("benchmark needs a victim trained from a synthetic spec")
        rows = benchmark_surrogates(factory, standard_surrogates(victim.train_spec, a.seed),
                                    cfg, eval_set, victim.test_accuracy)
        write_csv(rows, BENCHMARK_COLUMNS, out / "benchmark.csv")
        outputs = [out / "benchmark.csv"]
    else:
        if not a.surrogate:
            raise ExforgeError("--surrogate or --benchmark is required")
        res = distill(factory(), Dataset.load(a.surrogate), cfg, eval_set)
        res.student.save(out / "student.json")
        jsonio.dump({"accuracy": res.accuracy, "tau": res.tau, "schedule": res.schedule,
                     "n_queries": res.n_queries, "grid": res.grid,
                     "normalized_accuracy": res.accuracy / victim.test_accuracy},
                    out / "summary.json")
        inputs.append(a.surrogate)
        outputs = [out / "student.json", out / "summary.json"]
        print(f"accuracy {res.accuracy:.4f} (tau {res.tau:g}, {res.schedule})")
    write_manifest(out, "distill", vars_clean(a), a.seed, inputs, outputs)
    return 0


def cmd_sweep(a) -> int:
    victim = VictimModel.load(a.victim)
    ts = victim.test_set()
    target = Dataset.load(a.target) if a.target else generate(victim.train_spec)
    surrogate = Dataset.load(a.surrogate)
    curve = sweep_lambda(lambda: OracleHandle(victim, a.budget), target, surrogate,
                         surrogate_config(a), (ts.inputs, ts.labels))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(curve, ("lambda", "accuracy"), out / "sweep.csv")
    inputs = [p for p in (a.victim, a.target, a.surrogate) if p]
    write_manifest(out, "sweep", vars_clean(a), a.seed, inputs, [out / "sweep.csv"])
    for lam, acc in curve:
        print(f"lambda {lam:.2f}  accuracy {acc:.4f}")
    return 0


def cmd_verify(a) -> int:
    if a.check == "lemma1":
        report = analysis.verify_lemma1(a.trials or 1000, seed=a.seed)
    elif a.check == "lemma2":
        report = analysis.verify_lemma2(a.trials or 10_000, seed=a.seed)
    else:
        if not a.victim:
            raise ExforgeError(f"verify {a.check} needs --victim")
        victims = [(Path(v).stem, VictimModel.load(v)) for v in a.victim]
        handles = [(name, OracleHandle(v, 0), v.test_set().inputs) for name, v in victims]
        name, handle, X = handles[0]
        if a.check == "lemma3":
            report = analysis.verify_lemma3(handle, X[:a.probe], a.steps, a.seed)
        elif a.check == "hypothesis1":
            report = analysis.hypothesis1_probe(handle, X[:a.probe], steps=a.steps, seed=a.seed)
        else:
            report = analysis.logit_error_study(handles)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    analysis.write_report(report, a.out)
    write_manifest(_out_dir(a.out), f"verify-{a.check}", vars_clean(a), a.seed,
                   a.victim or [], [a.out])
    print(f"{report['check']}: {report['status']}")
    return 0 if report["status"] != analysis.FAIL else 1


def min_queries_to_target(records, target: float):
    for r in records:
        if np.isfinite(r.accuracy) and r.accuracy >= target:
            return r.queries_used
    return None


def collect_runs(root) -> list[dict]:
    runs = []
    for summary in sorted(Path(root).rglob("summary.json")):
        metrics = summary.parent / "metrics.csv"
        if not metrics.exists():
            continue
        doc = jsonio.load(summary)
        runs.append({"run": str(summary.parent.relative_to(root)), "summary": doc,
                     "metrics": read_metrics_csv(metrics)})
    return runs


def cmd_report(a) -> int:
    runs = collect_runs(a.inp)
    if not runs:
        raise ExforgeError(f"no attack runs found under {a.inp}")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    run_cols = ("run", "loss", "logit_mode", "m", "budget", "queries_used", "victim_accuracy",
               "accuracy", "normalized_accuracy", "fidelity")
    run_rows = []
    target_rows = []
    for r in runs:
        cfg, fin = r["summary"]["config"], r["summary"]["final"]
        run_rows.append({"run": r["run"], "loss": cfg["loss"], "logit_mode": cfg["logit_mode"],
                   "m": cfg["fwd"]["m"], "budget": cfg["budget"],
                   "queries_used": fin["queries_used"],
                   "victim_accuracy": r["summary"]["victim_accuracy"],
                   "accuracy": fin["accuracy"],
                   "normalized_accuracy": r["summary"]["normalized_accuracy"],
                   "fidelity": fin["fidelity"]})
        q = min_queries_to_target(r["metrics"], a.target)
        target_rows.append({"run": r["run"], "m": cfg["fwd"]["m"], "target": a.target,
                   "min_queries": "" if q is None else q})
    write_csv(run_rows, run_cols, out / "runs.csv")
    write_csv(target_rows, ("run", "m", "target", "min_queries"), out / "queries_to_target.csv")
    by_m = {}
    for row in target_rows:
        if row["min_queries"] != "":
            by_m[row["m"]] = min(by_m.get(row["m"], row["min_queries"]), row["min_queries"])
    write_csv(sorted(by_m.items()), ("m", "min_queries"), out / "queries_to_target_by_m.csv")
    outputs = [out / n for n in ("runs.csv", "queries_to_target.csv",
                                 "queries_to_target_by_m.csv")]
    write_manifest(out, "report", vars_clean(a), None, [a.inp], outputs)
    return 0


# ---------------------------------------------------------------- parser


def vars_clean(a) -> dict:
    return {k: v for k, v in vars(a).items() if k not in ("func", "config")}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="exforge", description="Data-free model extraction laboratory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON file of flag defaults")
        if seed:
            sp.add_argument("--seed", type=int, default=_default_seed())
        return sp

    g = common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--n", type=int, default=3000)
    g.add_argument("--d", type=int)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--skew", type=int, default=0, help="keep only the first N classes")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = common(sub.add_parser("train-victim", help="train a victim classifier"))
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--preset", choices=sorted(REFERENCE_SPECS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", type=int, nargs="+")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--wd", type=float)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_victim)

    s = common(sub.add_parser("serve", help="serve a victim over TCP"), seed=False)
    s.add_argument("--victim", required=True)
    s.add_argument("--budget", type=int, required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=9009)
    s.set_defaults(func=cmd_serve)

    at = common(sub.add_parser("attack", help="run data-free extraction"))
    at.add_argument("--oracle", required=True, help="victim checkpoint or host:port")
    at.add_argument("--budget", type=int, default=200_000)
    at.add_argument("--ng", type=int, default=1)
    at.add_argument("--ns", type=int, default=5)
    at.add_argument("--m", type=int, default=1)
    at.add_argument("--eps", type=float, default=1e-3)
    at.add_argument("--batch", type=int, default=64)
    at.add_argument("--latent-dim", type=int, default=8)
    at.add_argument("--loss", choices=("l1", "kl"), default="l1")
    at.add_argument("--logits", choices=sorted(LOGIT_FLAGS), default="recovered")
    at.add_argument("--flip-prob", type=float, default=0.0)
    at.add_argument("--eval-every", type=int, default=10_000)
    at.add_argument("--eval-data")
    at.add_argument("--init-student")
    at.add_argument("--diagnostics", action="store_true")
    at.add_argument("--out", required=True)
    at.set_defaults(func=cmd_attack)

    for name, func, help_ in (("distill", cmd_distill, "distil from a surrogate dataset"),
                              ("sweep", cmd_sweep, "interpolation sweep")):
        d = common(sub.add_parser(name, help=help_))
        d.add_argument("--victim", required=True)
        d.add_argument("--surrogate", required=(name == "sweep"))
        d.add_argument("--budget", type=int, default=1_000_000)
        d.add_argument("--cap", type=int, default=3000)
        d.add_argument("--epochs", type=int, default=30)
        d.add_argument("--taus", type=float, nargs="+", default=[1, 3, 5, 10])
        d.add_argument("--schedules", nargs="+", default=["cyclic", "step-decay"])
        d.add_argument("--lambdas", type=float, nargs="+", default=[0, 0.25, 0.5, 0.75, 1])
        d.add_argument("--out", required=True)
        if name == "distill":
            d.add_argument("--benchmark", action="store_true")
            d.add_argument("--eval-data")
        else:
            d.add_argument("--target")
        d.set_defaults(func=func)

    v = common(sub.add_parser("verify", help="check the softmax lemmas and hypotheses"))
    v.add_argument("check", choices=("lemma1", "lemma2", "lemma3", "hypothesis1", "logits"))
    v.add_argument("--victim", nargs="+")
    v.add_argument("--trials", type=int)
    v.add_argument("--steps", type=int, default=2000)
    v.add_argument("--probe", type=int, default=256)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_verify)

    r = common(sub.add_parser("report", help="aggregate attack runs into tables"), seed=False)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--target", type=float, default=0.85)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        overrides = jsonio.load(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(overrides) - known
        if unknown:
            parser.error(f"unknown settings in {args.config}: {sorted(unknown)}")
        sp.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except BudgetExhausted as exc:
        print(f"exforge: budget exhausted: {exc}", file=sys.stderr)
        return 2
    except (ExforgeError, ValueError, OSError) as exc:
        print(f"exforge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
