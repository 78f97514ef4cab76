"""Train and evaluate one classifier per SDE family on the same data."""

from __future__ import annotations

import dataclasses

from .classifier import classify_dataset
from .data import LabeledDataset
from .likelihood import LikelihoodConfig
from .metrics import evaluation_report
from .sde import Family, SdeSpec
from .training import TrainConfig, train


def compare_sde_families(train_ds: LabeledDataset, test_ds: LabeledDataset, families=tuple(Family),
                         train_cfg: TrainConfig = TrainConfig(), lik_cfg: LikelihoodConfig = LikelihoodConfig(),
                         base_spec: SdeSpec = SdeSpec()) -> list[dict]:
    rows = []
    for fam in families:
        spec = dataclasses.replace(base_spec, family=Family.parse(str(getattr(fam, "value", fam))))
        net, report = train(train_ds, spec, train_cfg)
        results = classify_dataset(spec, net, test_ds, lik_cfg)
        rep = evaluation_report([r.predicted for r in results], test_ds.labels,
                                [r.posterior[1] for r in results])
        rows.append({"family": spec.family.value, "epochs": len(report.epochs),
                     "best_val_loss": report.best_val_loss, **rep})
    return rows


def format_table(rows: list[dict]) -> str:
    def pct(v):
        return "   n/a" if v is None else f"{100 * v:6.2f}"

    lines = [f"{'SDE':<8}{'Acc.':>8}{'AUC':>8}{'Spe.':>8}{'Sen.':>8}"]
    for r in rows:
        lines.append(f"{r['family']:<8}  {pct(r['accuracy'])}  {pct(r['auc'])}"
                     f"  {pct(r['specificity'])}  {pct(r['sensitivity'])}")
    return "\n".join(lines)
