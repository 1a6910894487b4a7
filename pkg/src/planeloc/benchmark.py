"""End-to-end synthetic benchmark: searches, ablation retraining and test evaluation.

Every unit of work (one search, one variant training, one baseline) is cached
as JSON under ``root/units`` keyed by a digest of its configuration, so an
interrupted run resumes where it stopped and the acceptance checks can read
results without recomputing them.

    python -m planeloc.benchmark --root bench            # run / resume everything
    python -m planeloc.benchmark --root bench --summary  # print the tables
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .eval import paired_ttest
from .nas import Genotype
from .phantom import PhantomConfig, generate_phantom
from .pipeline import evaluate_network, evaluate_random, split_cases
from .qlearn import TrainerConfig, run_search, run_train

# variant label -> (backbone, rnn)
VARIANTS = {
    "MARL": ("fixed", "none"),
    "G-MARL": ("searched", "none"),
    "G-MARL-R": ("searched", "fixed"),
    "Ours": ("searched", "searched"),
}

# Desk-scale profile: 32 px observations, a two-cell shared trunk and one
# unique cell per agent, larger action steps than the clinical presets.
PROFILE = dict(obs_size=32, channels=4, stem_stride=2, shared_layout="NR", unique_layout="R",
               step_sizes=(1.5, 1.5, 1.5, 0.3), lr_weights=1e-3, gamma=0.9, batch=32,
               horizon_train=50, horizon_test=30, init_angle=20.0, init_dist=4.0, n_envs=8)


@dataclass
class BenchmarkSpec:
    n_train: int = 40
    n_val: int = 10
    n_test: int = 20
    seed_base: int = 0
    seeds: tuple = (0, 1, 2)
    trainer: dict = field(default_factory=lambda: dict(PROFILE))
    train_epochs: int = 10
    train_every: int = 4
    search_epochs: int = 6
    search_train_every: int = 8
    search_cases: int = 20
    darts_batch: int = 8

    def base_config(self, seed: int) -> TrainerConfig:
        return TrainerConfig(**self.trainer, seed=seed)

    def search_config(self, seed: int, sampler: str) -> TrainerConfig:
        batch = self.darts_batch if sampler == "darts" else self.trainer["batch"]
        return self.base_config(seed).replace(backbone="searched", rnn="searched", sampler=sampler, batch=batch,
                                              search_epochs=self.search_epochs,
                                              train_every=self.search_train_every)

    def train_config(self, seed: int, variant: str) -> TrainerConfig:
        backbone, rnn = VARIANTS[variant]
        return self.base_config(seed).replace(backbone=backbone, rnn=rnn, train_epochs=self.train_epochs,
                                              train_every=self.train_every)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _cfg_dict(cfg: TrainerConfig) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()}


class Benchmark:
    def __init__(self, root, spec: BenchmarkSpec | None = None, log=print):
        self.root = Path(root)
        self.spec = spec or BenchmarkSpec()
        self.log = log
        self._cases = None
        torch.set_num_threads(1)

    # -- data --------------------------------------------------------------

    @property
    def data_key(self) -> dict:
        s = self.spec
        return dict(n=s.n_train + s.n_val + s.n_test, seed_base=s.seed_base, phantom=dataclasses.asdict(PhantomConfig()))

    def cases(self):
        if self._cases is None:
            s = self.spec
            n = s.n_train + s.n_val + s.n_test
            sp = split_cases([generate_phantom(s.seed_base + i) for i in range(n)], s.n_train, s.n_val, s.n_test)
            self._cases = (sp.train, sp.val, sp.test)
        return self._cases

    # -- cache -------------------------------------------------------------

    def _unit(self, kind: str, key: dict, compute):
        key = dict(key, kind=kind, data=self.data_key)
        path = self.root / "units" / f"{kind}_{_digest(key)}.json"
        if path.exists():
            return json.loads(path.read_text())["result"]
        t0 = time.time()
        result = compute()
        result["seconds"] = time.time() - t0
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(dict(key=key, result=result), indent=1, default=str))
        tmp.replace(path)
        return result

    # -- units -------------------------------------------------------------

    def search(self, seed: int, sampler: str) -> dict:
        cfg = self.search_config(seed, sampler)

        def compute():
            train, val, _ = self.cases()
            tag = f"search {sampler} seed {seed}"
            res = run_search(train[:self.spec.search_cases], val, cfg, log=self._progress(tag))
            return dict(genotype=res.genotype.to_text(), epoch=res.epoch, history=res.history,
                        sad=[l.mean_sad for l in res.logs], loss=[l.loss for l in res.logs])
        return self._unit("search", dict(cfg=_cfg_dict(cfg), cases=self.spec.search_cases), compute)

    def search_config(self, seed, sampler):
        return self.spec.search_config(seed, sampler)

    def train(self, seed: int, variant: str) -> dict:
        cfg = self.spec.train_config(seed, variant)
        needs = VARIANTS[variant] != ("fixed", "none")
        geno_text = self.search(seed, "gdas")["genotype"] if needs else None

        def compute():
            train, val, test = self.cases()
            genotype = None
            if geno_text is not None:
                genotype = Genotype.from_text(geno_text)
                if cfg.rnn != "searched":
                    genotype.rnn = None
            res = run_train(train, val, genotype, cfg, log=self._progress(f"train {variant} seed {seed}"))
            ev = evaluate_network(res.net, test, cfg, "test", variant)
            return dict(curves=[dataclasses.asdict(l) for l in res.logs], **_summary(ev))
        return self._unit("train", dict(cfg=_cfg_dict(cfg), genotype=geno_text), compute)

    def random(self, seed: int) -> dict:
        cfg = self.spec.base_config(seed)

        def compute():
            _, _, test = self.cases()
            return _summary(evaluate_random(test, cfg, "test"))
        return self._unit("random", dict(cfg=_cfg_dict(cfg)), compute)

    def _progress(self, tag):
        def f(e):
            self.log(f"[{tag}] epoch {e.epoch} reward {e.accumulated_reward:.2f} SAD {e.mean_sad:.3f} "
                     f"loss {e.loss:.4f}")
        return f

    # -- driver ------------------------------------------------------------

    def run(self, stages=("search", "train", "random")) -> dict:
        for seed in self.spec.seeds:
            if "search" in stages:
                self.search(seed, "gdas")
                self.search(seed, "darts")
            if "train" in stages:
                for v in ("Ours", "MARL", "G-MARL", "G-MARL-R"):
                    self.train(seed, v)
            if "random" in stages:
                self.random(seed)
        return self.results()

    def results(self, compute: bool = True) -> dict:
        """All unit results; with ``compute=False`` missing units are None."""
        def get(fn, *a):
            try:
                return fn(*a) if compute else self._cached(fn, *a)
            except KeyError:
                return None
        out = {"spec": dataclasses.asdict(self.spec), "seeds": {}}
        for seed in self.spec.seeds:
            out["seeds"][seed] = dict(
                search={s: get(self.search, seed, s) for s in ("gdas", "darts")},
                train={v: get(self.train, seed, v) for v in VARIANTS},
                random=get(self.random, seed))
        return out

    def _cached(self, fn, *args):
        """Run ``fn`` with computation disabled: raise KeyError if any unit is missing."""
        orig = self._unit

        def lookup(kind, key, compute):
            key = dict(key, kind=kind, data=self.data_key)
            path = self.root / "units" / f"{kind}_{_digest(key)}.json"
            if not path.exists():
                raise KeyError(path.name)
            return json.loads(path.read_text())["result"]
        self._unit = lookup
        try:
            return fn(*args)
        finally:
            self._unit = orig


def _summary(ev) -> dict:
    r = ev.report
    return dict(per_case_sad=ev.sad.tolist(), init_sad=ev.init_sad.tolist(), rewards=ev.rewards.tolist(),
                mean_sad=ev.mean_sad, accumulated_reward=ev.accumulated_reward,
                ang=r.avg_mean["ang"], dis=r.avg_mean["dis"], ssim=r.avg_mean["ssim"],
                ang_planes=r.mean["ang"].tolist(), dis_planes=r.mean["dis"].tolist(),
                ang_std=r.avg_std["ang"], dis_std=r.avg_std["dis"], records=r.records)


def successive_difference_variance(series) -> float:
    return float(np.var(np.diff(np.asarray(series, dtype=np.float64))))


def summarize(results: dict) -> str:
    """Plain-text summary: per-variant test metrics averaged over seeds, search stability, t-tests."""
    seeds = results["seeds"]
    lines = ["Test metrics (mean over seeds; per-seed SAD in brackets)"]
    rows = {}
    for v in list(VARIANTS) + ["Random"]:
        per = [s["random"] if v == "Random" else s["train"].get(v) for s in seeds.values()]
        per = [p for p in per if p]
        if not per:
            continue
        rows[v] = per
        sad = [p["mean_sad"] for p in per]
        lines.append(f"  {v:9s} Ang {np.mean([p['ang'] for p in per]):6.2f}  Dis {np.mean([p['dis'] for p in per]):5.2f}  "
                     f"SSIM {np.mean([p['ssim'] for p in per]):.3f}  SAD {np.mean(sad):6.2f}  "
                     f"[{', '.join(f'{x:.2f}' for x in sad)}]")
    if "Ours" in rows and "MARL" in rows:
        a = np.concatenate([p["per_case_sad"] for p in rows["Ours"]])
        b = np.concatenate([p["per_case_sad"] for p in rows["MARL"]])
        if len(a) == len(b):
            lines.append(f"  paired t-test Ours vs MARL on per-case SAD: p = {paired_ttest(a, b):.3g}")
    lines.append("Search stability (variance of successive differences of validation reward)")
    for seed, s in seeds.items():
        g, d = s["search"].get("gdas"), s["search"].get("darts")
        if g and d:
            lines.append(f"  seed {seed}: GDAS {successive_difference_variance(g['history']):.2f}  "
                         f"DARTS {successive_difference_variance(d['history']):.2f}  "
                         f"(time {g['seconds'] / 60:.0f} / {d['seconds'] / 60:.0f} min)")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="synthetic end-to-end benchmark")
    p.add_argument("--root", default="bench")
    p.add_argument("--stages", default="search,train,random")
    p.add_argument("--seeds", default=None, help="comma-separated subset of seeds")
    p.add_argument("--summary", action="store_true", help="print cached results only")
    args = p.parse_args(argv)
    spec = BenchmarkSpec()
    bench = Benchmark(args.root, spec, log=lambda m: print(m, flush=True))
    if args.summary:
        print(summarize(bench.results(compute=False)))
        return 0
    if args.seeds:
        bench.spec = dataclasses.replace(spec, seeds=tuple(int(s) for s in args.seeds.split(",")))
    bench.run(tuple(args.stages.split(",")))
    bench.spec = spec
    print(summarize(bench.results(compute=False)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
