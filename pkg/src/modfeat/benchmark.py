"""The default synthetic benchmark: paired modulated-vs-baseline runs.

Seven classes, four domains (leave one out), 10 labels per class, an
identity extractor so the modulation weight columns stay aligned with
the known signal/noise input roles. Each seed regenerates the dataset
and both training modes run on the same split, so per-seed differences
are paired.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as dat
from . import metrics as met
from . import trainer as trn

DEFAULT_DATA = dict(
    num_classes=7,
    num_domains=4,
    signal_dim=16,
    noise_dim=16,
    samples_per_class_per_domain=150,
    class_sep=2.0,
    domain_shift=6.0,
    bias_jitter=1.0,
)
DEFAULT_TARGET_DOMAIN = 3
DEFAULT_LABELS_PER_CLASS = 10
FEATURE_DIM = DEFAULT_DATA["signal_dim"] + DEFAULT_DATA["noise_dim"]


@dataclass
class SeedOutcome:
    seed: int
    fm: trn.TrainResult
    baseline: trn.TrainResult
    modulator_gap: float

    @property
    def improvement(self) -> float:
        return (
            self.fm.reports[-1].target_accuracy
            - self.baseline.reports[-1].target_accuracy
        )


@dataclass
class ComparisonResult:
    outcomes: list = field(default_factory=list)

    def final(self, mode: str, metric: str) -> np.ndarray:
        results = [
            o.fm if mode == "fm" else o.baseline for o in self.outcomes
        ]
        return np.array([getattr(r.reports[-1], metric) for r in results])

    @property
    def mean_improvement(self) -> float:
        return float(np.mean([o.improvement for o in self.outcomes]))

    @property
    def gaps(self) -> np.ndarray:
        return np.array([o.modulator_gap for o in self.outcomes])

    def keep_curves(self, mode: str = "fm") -> np.ndarray:
        results = [o.fm if mode == "fm" else o.baseline for o in self.outcomes]
        return np.array([[rep.keep_rate for rep in r.reports] for r in results])


def run_comparison(
    seeds=range(5),
    epochs: int = 20,
    out_dir: Optional[Path] = None,
    verbose: bool = False,
) -> ComparisonResult:
    """Train both modes on identical per-seed datasets and splits."""
    result = ComparisonResult()
    for seed in seeds:
        dataset = dat.generate_synthetic(seed=seed, **DEFAULT_DATA)
        plan = dat.SplitPlan(
            target_domain=DEFAULT_TARGET_DOMAIN,
            labels_per_class=DEFAULT_LABELS_PER_CLASS,
            seed=seed,
        )
        runs = {}
        for mode in ("fm", "fixmatch-baseline"):
            cfg = trn.TrainConfig(epochs=epochs, seed=seed, mode=mode)
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / f"{mode}_seed{seed}"
            runs[mode] = trn.train(
                dataset,
                plan,
                cfg,
                hidden_dims=(),
                feature_dim=FEATURE_DIM,
                run_dir=run_dir,
            )
        gap = met.modulator_gap(
            runs["fm"].modulation.values, dataset.signal_dims, dataset.noise_dims
        )
        outcome = SeedOutcome(seed, runs["fm"], runs["fixmatch-baseline"], gap)
        result.outcomes.append(outcome)
        if verbose:
            fm_rep = outcome.fm.reports[-1]
            base_rep = outcome.baseline.reports[-1]
            print(
                f"seed {seed}: fm acc={fm_rep.target_accuracy:.4f} "
                f"keep={fm_rep.keep_rate:.3f} | baseline "
                f"acc={base_rep.target_accuracy:.4f} keep={base_rep.keep_rate:.3f} "
                f"| improvement={outcome.improvement:+.4f} gap={gap:+.3f}"
            )
    if out_dir is not None:
        write_comparison_csv(result, Path(out_dir) / "comparison.csv")
    return result


def write_comparison_csv(result: ComparisonResult, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "seed",
                "fm_target_acc",
                "baseline_target_acc",
                "improvement",
                "fm_keep_rate",
                "baseline_keep_rate",
                "fm_pl_acc",
                "baseline_pl_acc",
                "modulator_gap",
            ]
        )
        for o in result.outcomes:
            fm_rep, base_rep = o.fm.reports[-1], o.baseline.reports[-1]
            writer.writerow(
                [
                    o.seed,
                    repr(fm_rep.target_accuracy),
                    repr(base_rep.target_accuracy),
                    repr(o.improvement),
                    repr(fm_rep.keep_rate),
                    repr(base_rep.keep_rate),
                    "" if fm_rep.pl_accuracy is None else repr(fm_rep.pl_accuracy),
                    "" if base_rep.pl_accuracy is None else repr(base_rep.pl_accuracy),
                    repr(o.modulator_gap),
                ]
            )
