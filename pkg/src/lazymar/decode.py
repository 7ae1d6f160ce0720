"""MAR decoding loop.

Random-number use per generation with seed ``s``:

* token picks: the main stream ``Rng(s)``, consumed only by
  :func:`pick_tokens_to_decode`, so picks never depend on cache settings;
* diffusion noise for image token ``i`` at step ``k``:
  ``Rng(substream(s, HEAD_DOMAIN, k, i))``;
* random compute-set filling at step ``k`` on branch ``b``:
  ``Rng(substream(s, SELECT_DOMAIN, k, b))``.
"""
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import flops
from .cache import (
    CacheSchedule, ConditionCache, StepKind, TokenCache, TokenClass,
    forward_cached, schedule_kind,
)
from .errors import ContractError, ScheduleError
from .model import (
    Branch, cfg_mix, diffusion_head_batch, embed, forward_from_embedding, head_noise,
)
from .rng import Rng, substream
from .tensor import MacCounter, counting

HEAD_DOMAIN = 1
SELECT_DOMAIN = 2
_BRANCH_KEY = {Branch.COND: 0, Branch.UNCOND: 1}


@dataclass(frozen=True)
class MaskSchedule:
    counts: tuple

    @property
    def steps(self):
        return len(self.counts)

    def cumulative(self):
        return list(np.cumsum(self.counts))


def cosine_schedule(steps, n_img):
    """Per-step decode counts following ``c_k = n - round(n cos(pi k / 2K))``.

    ``round`` is half-up. Counts below 1 are raised to 1, and the resulting
    surplus is taken back from the last steps (latest first) without
    dropping any count below 1.
    """
    if not 1 <= steps <= n_img:
        raise ScheduleError(f"need 1 <= steps <= n_img, got steps={steps}, n_img={n_img}")
    cum = [n_img - math.floor(n_img * math.cos(math.pi * k / (2 * steps)) + 0.5)
           for k in range(steps + 1)]
    cum[0], cum[-1] = 0, n_img
    counts = [cum[k] - cum[k - 1] for k in range(1, steps + 1)]
    surplus = 0
    for i, c in enumerate(counts):
        if c < 1:
            surplus += 1 - c
            counts[i] = 1
    i = steps - 1
    while surplus > 0:
        take = min(surplus, counts[i] - 1)
        counts[i] -= take
        surplus -= take
        i -= 1
    return MaskSchedule(tuple(counts))


@dataclass
class GenState:
    """Decode status of one stream. ``status[i]`` is 0 or the step that decoded it."""

    step: int
    status: np.ndarray
    values: np.ndarray
    rng: Rng

    @classmethod
    def new(cls, n_img, token_dim, seed):
        return cls(1, np.zeros(n_img, dtype=np.int64), np.zeros((n_img, token_dim)), Rng(seed))

    def undecoded(self):
        return np.flatnonzero(self.status == 0)


def pick_tokens_to_decode(state, count, rng=None):
    """Uniform random subset of undecoded indices (sorted)."""
    rng = state.rng if rng is None else rng
    remaining = state.undecoded()
    if count > remaining.size or count < 0:
        raise ContractError(f"cannot decode {count} of {remaining.size} remaining tokens")
    return np.sort(np.asarray(rng.sample(remaining.tolist(), count), dtype=np.int64))


def token_classes(status, current, step):
    """Decode-order class of every image token at ``step``."""
    classes = np.full(status.shape, TokenClass.UNDECODED, dtype=np.int64)
    decoded = status > 0
    classes[decoded & (status < step - 1)] = TokenClass.EARLIER
    classes[decoded & (status == step - 1)] = TokenClass.LAST
    classes[current] = TokenClass.CURRENT
    return classes


def sequence_classes(status, current, step, n_cond):
    """Classes over the whole sequence; condition slots count as EARLIER."""
    img = token_classes(status, current, step)
    return np.concatenate([np.full(n_cond, TokenClass.EARLIER, dtype=np.int64), img])


def _mse(a, b):
    return float(np.mean((a - b) ** 2))


@dataclass
class StepRecord:
    step: int
    kind: str
    decoded: int
    n_compute: dict
    similarity: dict
    macs: dict = field(default_factory=dict)
    output: np.ndarray = None
    trace: list = field(default_factory=list)
    analysis: dict = None
    compute_sets: dict = field(default_factory=dict)  # branch -> recomputed indices

    def to_dict(self):
        d = {
            "step": self.step,
            "kind": self.kind,
            "decoded": self.decoded,
            "n_compute": self.n_compute,
            "similarity": self.similarity,
        }
        if self.macs:
            d["macs"] = self.macs
        return d


class Generation:
    """One generation stream: state, per-branch caches and step records."""

    def __init__(self, weights, schedule, steps, seed, class_id=0,
                 instrument=False, capture=False):
        cfg = weights.config
        self.weights = weights
        self.config = cfg
        self.seed = seed
        self.class_id = class_id
        self.raw_schedule = schedule.validate(cfg.n)
        self.schedule = schedule.effective(cfg.n, steps)
        self.mask = cosine_schedule(steps, cfg.n_img)
        self.state = GenState.new(cfg.n_img, cfg.token_dim, seed)
        self.token_caches = {Branch.COND: TokenCache(), Branch.UNCOND: TokenCache()}
        self.cond_cache = ConditionCache()
        self.counter = MacCounter() if instrument else None
        self.capture = capture
        self.records = []
        self._prev_true = None

    @property
    def steps(self):
        return self.mask.steps

    @property
    def done(self):
        return self.state.step > self.steps

    def _branch(self, branch, kind, k, classes, record):
        x = embed(self.state.status, self.state.values, branch, self.class_id, self.weights)
        cache = self.token_caches[branch]
        if kind is StepKind.FULL or not self.schedule.token_cache:
            acts = forward_from_embedding(x, self.weights)
            if self.schedule.token_cache:
                cache.refresh(acts, k)
            record.n_compute[branch.value] = self.config.n
            return acts.output, None
        rng = Rng(substream(self.seed, SELECT_DOMAIN, k, _BRANCH_KEY[branch]))
        res = forward_cached(
            x, self.weights, cache, classes, self.schedule.n_compute,
            self.schedule.strategy, self.schedule.criterion, rng, k,
        )
        record.n_compute[branch.value] = int(res.compute_index.size)
        record.compute_sets[branch.value] = res.compute_index
        s = res.scores[~np.isnan(res.scores)]
        record.similarity[branch.value] = {
            "mean": float(s.mean()) if s.size else None,
            "min": float(s.min()) if s.size else None,
        }
        return res.output, res

    def _set_phase(self, phase):
        if self.counter is not None:
            self.counter.phase = phase

    def decode_step(self):
        if self.done:
            raise ContractError(f"all {self.steps} decoding steps have run")
        k = self.state.step
        cfg = self.config
        before = self.counter.snapshot() if self.counter is not None else None
        picks = pick_tokens_to_decode(self.state, self.mask.counts[k - 1])
        kind = schedule_kind(k, self.schedule)
        classes = sequence_classes(self.state.status, picks, k, cfg.n_cond)
        record = StepRecord(k, kind.value, int(picks.size), {}, {})

        with counting(self.counter) if self.counter is not None else _nullctx():
            self._set_phase("cond")
            cond_out, cond_res = self._branch(Branch.COND, kind, k, classes, record)
            self._set_phase("uncond")
            uncond_res = None
            if kind is StepKind.CACHED and self.schedule.condition_cache:
                uncond_out = self.cond_cache.apply(cond_out)
                record.n_compute[Branch.UNCOND.value] = 0
            else:
                uncond_out, uncond_res = self._branch(Branch.UNCOND, kind, k, classes, record)
                if kind is StepKind.FULL and self.schedule.condition_cache:
                    self.cond_cache.store(cond_out, uncond_out)
            mixed = cfg_mix(cond_out, uncond_out, cfg.gamma, cfg.cfg_form)

            self._set_phase("head")
            if picks.size:
                z = mixed[cfg.n_cond + picks]
                noise = np.stack([
                    head_noise(Rng(substream(self.seed, HEAD_DOMAIN, k, int(i))),
                               cfg.diff_steps, cfg.token_dim)
                    for i in picks
                ])
                self.state.values[picks] = diffusion_head_batch(z, self.weights, cfg.diff_steps, noise)

        if self.capture:
            self._capture(record, k, kind, classes, picks, cond_res, uncond_res, cond_out, uncond_out)
        self.state.status[picks] = k
        self.state.step += 1
        if self.counter is not None:
            after = self.counter.snapshot()
            record.macs = {p: after.get(p, 0) - before.get(p, 0) for p in flops.PHASES}
        record.output = mixed
        self.records.append(record)
        return record

    def _capture(self, record, k, kind, classes, picks, cond_res, uncond_res, cond_out, uncond_out):
        """Analysis-only shadow computation; never counted and never cached.

        The status used here is the pre-decode one, matching what the real
        branches saw at this step.
        """
        from .analysis import capture_rows

        shadow = {}
        with counting(MacCounter()):
            for branch in (Branch.COND, Branch.UNCOND):
                x = embed(self.state.status, self.state.values, branch, self.class_id, self.weights)
                shadow[branch] = forward_from_embedding(x, self.weights)
        true_cond = shadow[Branch.COND].output
        true_uncond = shadow[Branch.UNCOND].output
        rows = []
        for branch, res in ((Branch.COND, cond_res), (Branch.UNCOND, uncond_res)):
            if res is None:
                continue
            rows.extend(capture_rows(k, branch.value, classes, res, shadow[branch].output))
        step_stats = None
        if self._prev_true is not None:
            pc, pu = self._prev_true
            step_stats = {
                "cond": _mse(true_cond, pc),
                "uncond": _mse(true_uncond, pu),
                "residual": _mse(true_cond - true_uncond, pc - pu),
            }
        self._prev_true = (true_cond, true_uncond)
        record.trace = rows
        record.analysis = step_stats

    def run(self):
        while not self.done:
            self.decode_step()
        return self


class _nullctx:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def grid_digest(grid):
    return hashlib.sha256(np.ascontiguousarray(grid, dtype="<f8").tobytes()).hexdigest()


def build_report(gen, baseline=None):
    """JSON-ready run report; identical inputs give identical reports."""
    cfg = gen.config
    ledger = flops.cost_run(flops.CostModelInput(cfg, list(gen.mask.counts), gen.schedule))
    report = {
        "n_img": cfg.n_img,
        "n": cfg.n,
        "steps": gen.steps,
        "seed": gen.seed,
        "class_id": gen.class_id,
        "caching": gen.schedule.describe(),
        "decode_counts": list(gen.mask.counts),
        "decoded_total": int((gen.state.status > 0).sum()),
        "token_grid_sha256": grid_digest(gen.state.values),
        "per_step": [r.to_dict() for r in gen.records],
        "ledger": ledger.to_dict(),
    }
    if gen.counter is not None:
        analytic = [{p: getattr(s, p) for p in flops.PHASES} for s in ledger.steps]
        measured = [r.macs for r in gen.records]
        report["instrumented"] = {
            "total": sum(sum(m.values()) for m in measured),
            "matches_analytical": measured == analytic,
        }
    cached = [r for r in gen.records if r.kind == StepKind.CACHED.value]
    if gen.schedule.token_cache:
        report["cache_reads"] = {
            b.value: sum(cfg.n - r.n_compute[b.value] for r in cached if r.n_compute.get(b.value))
            for b in Branch
        }
    if gen.capture:
        report["trace_rows"] = sum(len(r.trace) for r in gen.records)
    if baseline is not None:
        per_step = [_mse(r.output, b.output) for r, b in zip(gen.records, baseline.records)]
        report["baseline"] = {
            "output_mse": per_step,
            "final_output_mse": per_step[-1],
            "token_mse": _mse(gen.state.values, baseline.state.values),
            "baseline_grid_sha256": grid_digest(baseline.state.values),
        }
    return report


@dataclass
class GenerationResult:
    grid: np.ndarray
    report: dict
    generation: Generation
    baseline: Generation = None


def run_generation(weights, schedule, steps, seed, class_id=0, instrument=False,
                   capture=False, paired_baseline=False, baseline=None):
    gen = Generation(weights, schedule, steps, seed, class_id, instrument, capture).run()
    if paired_baseline and baseline is None:
        baseline = Generation(weights, CacheSchedule.off(), steps, seed, class_id).run()
    report = build_report(gen, baseline if paired_baseline else None)
    return GenerationResult(gen.state.values.copy(), report, gen, baseline)


def generate(run_config, seed=None):
    """Run one generation described by a :class:`~lazymar.config.RunConfig`.

    Returns ``(token_grid, report)``.
    """
    run_config.validate()
    weights = run_config.load_weights()
    res = run_generation(
        weights, run_config.cache_schedule(), run_config.steps,
        run_config.seed if seed is None else seed, run_config.class_id,
        instrument=run_config.instrument, capture=run_config.capture,
        paired_baseline=run_config.paired_baseline,
    )
    return res.grid, res.report
