"""Uncertainty-gated pseudo-labeling over modulated class scores.

For each unlabeled sample the class-probability matrix is evaluated K
times with dropout enabled (Monte Carlo sampling). The per-run diagonal
holds the confidence for each candidate class when features are
modulated toward that class. The label is the argmax of the K-run mean
diagonal; sigma is the K-run population standard deviation of the
predicted class's diagonal probability. A label is kept when
mean_confidence - sigma clears the threshold, and kept labels get a
confidence-dependent loss weight exp(p^3 - 1).

The fixed-threshold baseline path uses a single deterministic pass of
the unmodulated classifier and an all-or-nothing weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import network as net
from .autodiff import ParameterError, row_softmax
from .modulator import ModulationMatrix
from .network import Model
from .prototypes import PrototypeBank

BASELINE_THRESHOLD = 0.95


@dataclass(frozen=True)
class PseudoLabelRecord:
    label: int
    p_max: float
    sigma: float
    keep: bool
    l_scale: float


def confidence_scale(p: float) -> float:
    """Loss weight exp(p^3 - 1); strictly increasing from 1/e to 1."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"confidence must be in [0, 1], got {p}")
    return math.exp(p**3 - 1.0)


def gate_record(label: int, p_max: float, sigma: float, tau: float) -> PseudoLabelRecord:
    """Apply the uncertainty gate: keep iff p_max - sigma strictly clears
    tau; kept labels get the confidence-scaled weight, discarded get 0."""
    keep = bool(p_max - sigma > tau)
    return PseudoLabelRecord(
        label=int(label),
        p_max=float(p_max),
        sigma=float(sigma),
        keep=keep,
        l_scale=confidence_scale(float(p_max)) if keep else 0.0,
    )


def baseline_gate_record(label: int, p_max: float, tau_fixed: float) -> PseudoLabelRecord:
    """Fixed-threshold gate: strict inequality, all-or-nothing weight."""
    keep = bool(p_max > tau_fixed)
    return PseudoLabelRecord(
        label=int(label),
        p_max=float(p_max),
        sigma=0.0,
        keep=keep,
        l_scale=1.0 if keep else 0.0,
    )


def predict_matrices(
    u: np.ndarray,
    model: Model,
    modulation: ModulationMatrix,
    bank: PrototypeBank,
    dropout: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """(n, C, C) class-probability matrices for a batch of weak views.

    Entry [i, j, :] holds the class probabilities for sample i after
    modulating its features toward class j. No gradients are recorded.
    """
    u = np.atleast_2d(u)
    n = u.shape[0]
    c = model.num_classes
    mode = "mc" if dropout else "eval"
    logits = net.class_score_graph(model, modulation.node, bank.blended, u, mode, rng)
    return row_softmax(logits.value).reshape(n, c, c)


def predict_matrix(
    u: np.ndarray,
    model: Model,
    modulation: ModulationMatrix,
    bank: PrototypeBank,
    dropout: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Single-sample (C x C) probability matrix."""
    return predict_matrices(u, model, modulation, bank, dropout, rng)[0]


def pseudo_label_batch(
    u: np.ndarray,
    model: Model,
    modulation: ModulationMatrix,
    bank: PrototypeBank,
    mc_samples: int = 5,
    tau: float = 0.75,
    rng: Optional[np.random.Generator] = None,
) -> list:
    """Monte Carlo pseudo-labels for a batch of weakly augmented samples."""
    if mc_samples < 2:
        raise ParameterError(f"mc_samples must be >= 2, got {mc_samples}")
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must be in (0, 1), got {tau}")
    u = np.atleast_2d(u)
    n = u.shape[0]
    c = model.num_classes
    diags = np.empty((mc_samples, n, c))
    for k in range(mc_samples):
        s = predict_matrices(u, model, modulation, bank, dropout=True, rng=rng)
        diags[k] = np.diagonal(s, axis1=1, axis2=2)
    mean_diag = diags.mean(axis=0)
    labels = mean_diag.argmax(axis=1)
    rows = np.arange(n)
    p_max = mean_diag[rows, labels]
    sigma = diags[:, rows, labels].std(axis=0)  # population std, divisor K
    return [gate_record(labels[i], p_max[i], sigma[i], tau) for i in range(n)]


def pseudo_label(
    u: np.ndarray,
    model: Model,
    modulation: ModulationMatrix,
    bank: PrototypeBank,
    mc_samples: int = 5,
    tau: float = 0.75,
    rng: Optional[np.random.Generator] = None,
) -> PseudoLabelRecord:
    return pseudo_label_batch(u, model, modulation, bank, mc_samples, tau, rng)[0]


def baseline_pseudo_label_batch(
    u: np.ndarray,
    model: Model,
    tau_fixed: float = BASELINE_THRESHOLD,
) -> list:
    """Fixed-threshold labels from one deterministic unmodulated pass."""
    u = np.atleast_2d(u)
    probs = row_softmax(net.plain_score_graph(model, u, "eval").value)
    labels = probs.argmax(axis=1)
    p_max = probs[np.arange(u.shape[0]), labels]
    return [
        baseline_gate_record(labels[i], p_max[i], tau_fixed) for i in range(u.shape[0])
    ]


def baseline_pseudo_label(
    u: np.ndarray, model: Model, tau_fixed: float = BASELINE_THRESHOLD
) -> PseudoLabelRecord:
    return baseline_pseudo_label_batch(u, model, tau_fixed)[0]
