"""Generative classification: per-class likelihoods and the Bayes posterior."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import LabeledDataset
from .likelihood import LikelihoodConfig, log_likelihood_multi
from .sde import SdeSpec


@dataclass
class ClassificationResult:
    log_likes: np.ndarray
    posterior: np.ndarray
    predicted: int
    ground_truth: int | None = None

    @property
    def ground_truth_posterior(self) -> float | None:
        """p(y_gt | x), the quantity the inference procedure reports per input."""
        if self.ground_truth is None:
            return None
        return float(self.posterior[self.ground_truth])


def posterior(log_likes, log_prior=None) -> np.ndarray:
    """Softmax of log-likelihoods (plus optional log-prior); uniform prior by default.

    ``-inf`` entries get probability 0; all ``-inf`` is an error.
    """
    ll = np.asarray(log_likes, dtype=np.float64).reshape(-1)
    if log_prior is not None:
        ll = ll + np.asarray(log_prior, dtype=np.float64)
    if np.any(np.isnan(ll)) or np.any(ll == np.inf):
        raise ValueError("log-likelihoods must be finite or -inf")
    if np.all(ll == -np.inf):
        raise ValueError("all log-likelihoods are -inf; posterior undefined")
    return np.exp(ll - logsumexp(ll))


def class_log_likelihoods(spec: SdeSpec, net, x0, n: int, cfg: LikelihoodConfig, index: int = 0) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least two classes")
    if n > net.num_classes:
        raise ValueError(f"model knows {net.num_classes} classes, asked for {n}")
    return log_likelihood_multi(spec, net, x0, np.arange(n), cfg, index=index)


def decide(log_likes, ground_truth=None, log_prior=None) -> ClassificationResult:
    post = posterior(log_likes, log_prior)
    # np.argmax returns the first maximum, i.e. ties go to the smallest class index
    return ClassificationResult(np.asarray(log_likes, dtype=np.float64), post, int(np.argmax(post)),
                                None if ground_truth is None else int(ground_truth))


def classify(spec: SdeSpec, net, x0, n: int, cfg: LikelihoodConfig, index: int = 0,
             ground_truth: int | None = None, log_prior=None) -> ClassificationResult:
    return decide(class_log_likelihoods(spec, net, x0, n, cfg, index), ground_truth, log_prior)


def classify_dataset(spec: SdeSpec, net, ds: LabeledDataset, cfg: LikelihoodConfig, n: int | None = None,
                     with_truth: bool = True, progress=None) -> list[ClassificationResult]:
    """Classify every row; input ``i`` draws its probes from the (seed, i) stream."""
    n = n or ds.num_classes
    out = []
    for i, x in enumerate(ds.features):
        gt = int(ds.labels[i]) if with_truth else None
        out.append(classify(spec, net, x, n, cfg, index=i, ground_truth=gt))
        if progress is not None:
            progress(i + 1, len(ds))
    return out


def write_predictions_csv(results: list[ClassificationResult], path) -> None:
    n = len(results[0].log_likes) if results else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "ground_truth", "predicted"]
                   + [f"log_like_{j}" for j in range(n)] + [f"posterior_{j}" for j in range(n)])
        for i, r in enumerate(results):
            w.writerow([i, "" if r.ground_truth is None else r.ground_truth, r.predicted]
                       + [repr(float(v)) for v in r.log_likes] + [repr(float(v)) for v in r.posterior])


def read_predictions_csv(path) -> list[ClassificationResult]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if not {"index", "ground_truth", "predicted"} <= set(fields):
            raise ValueError(f"{path}: not a predictions file (missing index/ground_truth/predicted)")
        n = sum(1 for f in fields if f.startswith("posterior_"))
        results = []
        for row in reader:
            gt = row["ground_truth"]
            results.append(ClassificationResult(
                np.array([float(row[f"log_like_{j}"]) for j in range(n)]),
                np.array([float(row[f"posterior_{j}"]) for j in range(n)]),
                int(row["predicted"]),
                None if gt == "" else int(gt),
            ))
    return results
