"""Ablation sweeps: pre-train + fine-tune per grid point, repeated over seeds."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .doc import Document, Vocabulary
from .model import ModelConfig
from .train import (FinetuneConfig, PretrainConfig, evaluate_entities, finetune, pretrain,
                    random_checkpoint)

AXES = ("p_mlm", "p_mpm", "position", "strategy")

# strategy rows: name -> (masking strategy, MPM on); None means no pre-training at all
STRATEGY_ROWS = {
    "none": None,
    "naive": ("naive", False),
    "wwm": ("wwm", False),
    "wwm+lam": ("wwm_lam", False),
    "wwm+mpm": ("wwm", True),
    "wwm+lam+mpm": ("wwm_lam", True),
}
DEFAULT_GRIDS = {
    "p_mlm": [0.1, 0.15, 0.2, 0.25, 0.3, 0.35],
    "p_mpm": [0.05, 0.1, 0.15, 0.2, 0.25],
    "position": ["global/word", "global/segment", "local/word", "local/segment"],
    "strategy": ["naive", "wwm", "wwm+lam", "wwm+mpm", "wwm+lam+mpm"],
}
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def point_config(axis: str, value, base: PretrainConfig) -> Optional[PretrainConfig]:
    """The pre-training config for one grid point; None for the no-pre-training row."""
    if axis == "p_mlm":
        return replace(base, p_mlm=float(value))
    if axis == "p_mpm":
        return replace(base, p_mpm=float(value), enable_mpm=True)
    if axis == "position":
        try:
            one_d, two_d = str(value).split("/")
        except ValueError:
            raise ValueError(f"position grid values look like 'local/segment', got {value!r}") from None
        return replace(base, one_d_mode=one_d, two_d_mode=two_d)
    if axis == "strategy":
        if value not in STRATEGY_ROWS:
            raise ValueError(f"unknown strategy row {value!r}; choose from {sorted(STRATEGY_ROWS)}")
        row = STRATEGY_ROWS[value]
        if row is None:
            return None
        return replace(base, strategy=row[0], enable_mpm=row[1])
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {AXES}")


@dataclass
class SweepData:
    train: Sequence[Document]
    dev: Sequence[Document]
    test: Sequence[Document]
    vocab: Vocabulary
    labels: list[str]


def run_point(cfg: Optional[PretrainConfig], ft: FinetuneConfig, model_cfg: ModelConfig,
              data: SweepData, seed: int, base: Optional[PretrainConfig] = None) -> dict:
    """One pre-train + fine-tune + test evaluation with every seed set to ``seed``."""
    if cfg is None:
        ref = base or PretrainConfig()
        ckpt = random_checkpoint(model_cfg, data.vocab, ref.one_d_mode, ref.two_d_mode, seed=seed)
    else:
        ckpt = pretrain(replace(cfg, seed=seed), model_cfg, data.train, data.vocab).checkpoint
    res = finetune(replace(ft, seed=seed), ckpt, data.train, data.dev, data.labels)
    reports = evaluate_entities(res.checkpoint, data.test)
    return {
        "seed": seed,
        "entity_f1": reports["entity"].overall.f1,
        "word_f1": reports["word"].overall.f1,
        "entity_per_tag": {t: c.f1 for t, c in reports["entity"].per_tag.items()},
        "dev_best": res.best_score,
        "best_step": res.best_step,
    }


def _run(args):
    return run_point(*args)


@dataclass
class SweepTable:
    axis: str
    rows: list[dict] = field(default_factory=list)

    def row(self, point) -> dict:
        for r in self.rows:
            if r["point"] == point:
                return r
        raise KeyError(point)

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "rows": self.rows}, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "entity_f1_mean", "entity_f1_std", "word_f1_mean", "word_f1_std", "seeds"])
        for r in self.rows:
            w.writerow([r["point"], repr(r["entity_f1_mean"]), repr(r["entity_f1_std"]),
                        repr(r["word_f1_mean"]), repr(r["word_f1_std"]), len(r["runs"])])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{self.axis:<16} {'entity F1':>16} {'word F1':>16}"]
        for r in self.rows:
            lines.append(f"{str(r['point']):<16} {100 * r['entity_f1_mean']:>8.2f} ± {100 * r['entity_f1_std']:<5.2f}"
                         f" {100 * r['word_f1_mean']:>8.2f} ± {100 * r['word_f1_std']:<5.2f}")
        return "\n".join(lines)


def ablation_sweep(axis: str, grid: Sequence, base: PretrainConfig, ft: FinetuneConfig,
                   model_cfg: ModelConfig, data: SweepData, seeds: Sequence[int] = DEFAULT_SEEDS,
                   jobs: int = 1) -> SweepTable:
    """Mean ± std (population) of test F1 per grid point; seeds are shared across points."""
    if not grid:
        raise ValueError("ablation_sweep: empty grid")
    if not seeds:
        raise ValueError("ablation_sweep: no seeds")
    cfgs = [point_config(axis, v, base) for v in grid]
    tasks = [(c, ft, model_cfg, data, s, base) for c in cfgs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run, tasks))
    else:
        results = [_run(t) for t in tasks]
    table = SweepTable(axis)
    n = len(seeds)
    for i, value in enumerate(grid):
        runs = results[i * n:(i + 1) * n]
        ent = np.array([r["entity_f1"] for r in runs])
        word = np.array([r["word_f1"] for r in runs])
        table.rows.append({"point": value, "entity_f1_mean": float(ent.mean()), "entity_f1_std": float(ent.std()),
                           "word_f1_mean": float(word.mean()), "word_f1_std": float(word.std()), "runs": runs})
    return table
