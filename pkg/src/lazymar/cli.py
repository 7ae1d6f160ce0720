"""Command-line interface: ``lazymar {generate,ablate,sweep,analyze,flops,verify}``.

Settings come from ``--config FILE`` (flat ``key = value``) and are then
overridden by any flag given explicitly. Reports are JSON with sorted keys.
"""
import argparse
import json
import sys
from dataclasses import replace

from . import analysis, backend, experiments, flops, io
from .cache import CacheSchedule, Criterion, Strategy
from .config import RunConfig, load_config_file
from .decode import cosine_schedule, run_generation
from .errors import ConfigError, LazyMarError
from .model import CfgForm

SEEDS_FILE = "acceptance_seeds.json"

# Top-level keys of each command's JSON report (documented in README.md).
REPORT_KEYS = {
    "generate": {"command", "run"},
    "ablate": {"command", "kind", "seeds", "steps", "n", "n_compute", "schedule", "strategies", "ranking"},
    "sweep": {"command", "kind", "seeds", "steps", "n", "rows"},
    "flops": {"command", "fixture", "ledger"},
    "analyze": {"command", "token_rows", "samples", "cached_steps", "rho_feature", "rho_value",
                "mean_cosine_distance_by_class", "residual_ratio", "mean_cond_over_residual",
                "mean_uncond_over_residual"},
}
RUN_KEYS = {"n_img", "n", "steps", "seed", "class_id", "caching", "decode_counts", "decoded_total",
            "token_grid_sha256", "per_step", "ledger"}


def shipped_seeds():
    from importlib.resources import files

    return json.loads(files("lazymar").joinpath("data", SEEDS_FILE).read_text())["seeds"]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="flat key = value settings file")
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=S)
    g.add_argument("--width", type=int, default=S)
    g.add_argument("--heads", type=int, default=S)
    g.add_argument("--n-img", type=int, default=S)
    g.add_argument("--n-cond", type=int, default=S)
    g.add_argument("--n-classes", type=int, default=S)
    g.add_argument("--diff-steps", type=int, default=S)
    g.add_argument("--diff-width", type=int, default=S)
    g.add_argument("--token-dim", type=int, default=S)
    g.add_argument("--gamma", type=float, default=S)
    g.add_argument("--cfg-form", choices=[f.value for f in CfgForm], default=S)
    g.add_argument("--weights", default=S, help="LMW1 weight file")
    g.add_argument("--init-seed", type=int, default=S, help="initialise weights from this seed")
    g.add_argument("--save-weights", default=S)
    g = p.add_argument_group("decoding")
    g.add_argument("--steps", type=int, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--seeds", type=_int_list, default=S)
    g.add_argument("--class-id", type=int, default=S)
    g.add_argument("--warmup", type=int, default=S)
    g.add_argument("--period", type=int, default=S)
    g.add_argument("--n-compute", type=int, default=S)
    g.add_argument("--strategy", choices=[s.value for s in Strategy], default=S)
    g.add_argument("--criterion", choices=[c.value for c in Criterion], default=S)
    g.add_argument("--token-cache", dest="token_cache", action="store_true", default=S)
    g.add_argument("--no-token-cache", dest="token_cache", action="store_false", default=S)
    g.add_argument("--condition-cache", dest="condition_cache", action="store_true", default=S)
    g.add_argument("--no-condition-cache", dest="condition_cache", action="store_false", default=S)
    g.add_argument("--jobs", type=int, default=S)
    g = p.add_argument_group("output")
    g.add_argument("--report", default=S, help="write the JSON report here (default: stdout)")
    g.add_argument("--trace", default=S, help="write a trace CSV (enables analysis capture)")
    g.add_argument("--grid-out", default=S, help="write the LMG1 token grid here")
    g.add_argument("--paired-baseline", action="store_true", default=S)
    g.add_argument("--instrument", action="store_true", default=S)


def build_parser():
    parser = argparse.ArgumentParser(prog="lazymar", description=__doc__.splitlines()[0])
    parser.add_argument("--backend", choices=backend.BACKENDS, default=None,
                        help="kernel backend (default: compiled when built)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "run one generation"),
        ("ablate", "compare the five token-selection strategies"),
        ("sweep", "MSE versus cache ratio for max-similarity and random"),
        ("flops", "analytical FLOP ledger"),
        ("verify", "quick self-checks of the caching invariants"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--ratios", type=_float_list, default=argparse.SUPPRESS,
                           help="comma-separated cached fractions in [0, 1]")
        if name == "flops":
            p.add_argument("--fixture", choices=["none", "mar-b"], default="none",
                           help="use the documented MAR-B-like dims (K=64, W=4, tau=9, N=50)")
            p.add_argument("--per-step", action="store_true")
    p = sub.add_parser("analyze", help="correlation analysis of trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--report", default=None)
    return parser


def run_config_from_args(args):
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    fields = RunConfig.__dataclass_fields__
    for k, v in vars(args).items():
        if k in fields:
            values[k] = v
    if values.get("trace"):
        values["capture"] = True
    return RunConfig(**values)


def _emit(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _weights(rc):
    w = rc.load_weights()
    if rc.save_weights:
        io.save_weights(w, rc.save_weights)
    return w


def cmd_generate(rc):
    rc.validate()
    w = _weights(rc)
    res = run_generation(
        w, rc.cache_schedule(), rc.steps, rc.seed, rc.class_id, instrument=rc.instrument,
        capture=rc.capture, paired_baseline=rc.paired_baseline,
    )
    if rc.grid_out:
        io.save_grid(res.grid, rc.grid_out)
    if rc.trace:
        analysis.write_trace(analysis.generation_trace(res.generation), rc.trace)
    _emit({"command": "generate", "run": res.report}, rc.report)
    return 0


def _seeds(rc):
    return rc.seeds or shipped_seeds()


def cmd_ablate(rc):
    rc.validate()
    w = _weights(rc)
    rep = experiments.ablate(w, rc.cache_schedule(), rc.steps, _seeds(rc), rc.class_id, rc.jobs)
    _emit({"command": "ablate", **rep}, rc.report)
    return 0


def cmd_sweep(rc):
    rc.validate()
    w = _weights(rc)
    ratios = rc.ratios or [0.0, 0.25, 0.5, 0.75, 0.9]
    rep = experiments.sweep(w, rc.cache_schedule(), rc.steps, _seeds(rc), ratios, rc.class_id, rc.jobs)
    _emit({"command": "sweep", **rep}, rc.report)
    return 0


def mar_b_fixture_input():
    sched = CacheSchedule(warmup=4, period=9, n_compute=50)
    counts = cosine_schedule(64, flops.MAR_B_LIKE.n_img).counts
    return flops.CostModelInput(flops.MAR_B_LIKE, list(counts), sched)


def cmd_flops(rc, fixture, per_step):
    if fixture == "mar-b":
        inp = mar_b_fixture_input()
    else:
        rc.validate(need_weights=False)
        cfg = rc.model_config()
        inp = flops.CostModelInput(cfg, list(cosine_schedule(rc.steps, cfg.n_img).counts),
                                   rc.cache_schedule())
    ledger = flops.cost_run(inp).to_dict()
    if not per_step:
        ledger.pop("steps")
    _emit({"command": "flops", "fixture": fixture, "ledger": ledger}, rc.report)
    return 0


def cmd_verify(rc):
    """Degeneracy, instrumentation and condition-cache checks on the toy model."""
    rc.validate(need_weights=False)
    if rc.weights is None and rc.init_seed is None:
        rc = replace(rc, init_seed=42)
    w = rc.load_weights()
    n = w.config.n
    base = run_generation(w, CacheSchedule.off(), rc.steps, rc.seed)
    sched = rc.cache_schedule()
    checks = []
    for label, s in (
        ("period=1", replace(sched, period=1)),
        ("n_compute=n, condition cache off", replace(sched, n_compute=n, condition_cache=False)),
    ):
        r = run_generation(w, s, rc.steps, rc.seed)
        checks.append((f"degeneracy {label}", r.report == base.report and (r.grid == base.grid).all()))
    r = run_generation(w, sched, rc.steps, rc.seed, instrument=True)
    checks.append(("instrumented == analytical", r.report["instrumented"]["matches_analytical"]))
    r = run_generation(w, replace(sched, token_cache=False), rc.steps, rc.seed)
    full = flops.branch_full_cost(w.config)
    halves = [st["cond"] + st["uncond"] == full for st in r.report["ledger"]["steps"]
              if st["kind"] == "cached"]
    checks.append(("condition cache halves cached-step backbone", bool(halves) and all(halves)))
    ok = True
    for name, passed in checks:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return 0 if ok else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.backend:
            backend.set_backend(args.backend)
        if args.command == "analyze":
            _emit({"command": "analyze", **analysis.analyze_files(args.traces)}, args.report)
            return 0
        rc = run_config_from_args(args)
        if args.command == "generate":
            return cmd_generate(rc)
        if args.command == "ablate":
            return cmd_ablate(rc)
        if args.command == "sweep":
            return cmd_sweep(rc)
        if args.command == "flops":
            return cmd_flops(rc, args.fixture, args.per_step)
        return cmd_verify(rc)
    except ConfigError as exc:
        print(f"lazymar: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (LazyMarError, OSError, RuntimeError) as exc:
        print(f"lazymar: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
