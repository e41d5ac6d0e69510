"""Post-augmentation evaluation and plain-text reporting.

Measures exact NDCG@k on the perturbation (validation) and test sets with the
finalized train graph driving inference, compares each run against the
unaugmented baseline, and renders two views: a mitigation table (how much of
the group gap each policy removed) and a utility/disparity trade-off table.
Serialization is TSV with full-precision floats so reports round-trip; no
plotting happens here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .dataset import SplitDataset, relevants_by_user
from .graph import build_graph, normalized_adjacency
from .lightgcn import ModelParams, ranked_ndcg

SETS = ("perturbation", "test")
BASELINE_POLICY = "baseline"


@dataclass
class SetMetrics:
    """Group-aware exact NDCG@k summary of one evaluation set."""

    ndcg: float                  # mean over every user with ground truth
    disadvantaged_mean: float
    advantaged_mean: float
    delta_ndcg: float

    def as_tuple(self):
        return (self.ndcg, self.disadvantaged_mean, self.advantaged_mean, self.delta_ndcg)


@dataclass
class EvaluationReport:
    """One policy's evaluation, with the baseline it is compared against."""

    policy: str
    mode: str                    # "reuse" (frozen model) or "retrain"
    k: int
    num_added_edges: int
    perturbation: SetMetrics
    test: SetMetrics
    baseline_perturbation: SetMetrics | None = None
    baseline_test: SetMetrics | None = None
    runtime_seconds: float | None = None

    def set_metrics(self, which: str) -> SetMetrics:
        return {"perturbation": self.perturbation, "test": self.test}[which]

    def baseline_metrics(self, which: str) -> SetMetrics | None:
        return {"perturbation": self.baseline_perturbation,
                "test": self.baseline_test}[which]

    def rel_diff_ndcg(self, which: str) -> float | None:
        """Signed percentage change of overall NDCG vs the baseline."""
        base = self.baseline_metrics(which)
        if base is None:
            return None
        return metrics.relative_difference(base.ndcg, self.set_metrics(which).ndcg)

    def rel_diff_delta(self, which: str) -> float | None:
        """Percentage change of the group-gap magnitude vs the baseline.

        -100 means the gap closed completely; positive values mean it grew.
        """
        base = self.baseline_metrics(which)
        if base is None:
            return None
        return metrics.relative_difference(base.delta_ndcg,
                                           self.set_metrics(which).delta_ndcg, absolute=True)


def measure(params: ModelParams, splits: SplitDataset, groups, k: int) -> dict:
    """Exact per-set metrics of a model over given splits.

    ``groups`` is the (disadvantaged users, advantaged users) pair. Inference
    ranks every item outside the user's train set (which, after finalize,
    includes the added edges). Returns {"perturbation": SetMetrics, "test":
    SetMetrics, "per_user": {set: {user: ndcg}}}.
    """
    dis_users, adv_users = groups
    graph = build_graph(splits.train, params.num_users, params.num_items)
    operator = normalized_adjacency(graph)
    train_items = {}
    for u, i in graph.edges:
        train_items.setdefault(int(u), set()).add(int(i))
    out = {"per_user": {}}
    for name, interactions in (("perturbation", splits.validation), ("test", splits.test)):
        relevants = relevants_by_user(interactions)
        per_user = ranked_ndcg(params, operator, relevants, train_items, k)
        dis = [per_user[u] for u in dis_users if int(u) in per_user]
        adv = [per_user[u] for u in adv_users if int(u) in per_user]
        if not dis or not adv:
            raise ValueError(f"measure: a group has no users with {name}-set ground truth")
        overall = float(np.mean(list(per_user.values())))
        dis_mean, adv_mean = float(np.mean(dis)), float(np.mean(adv))
        out[name] = SetMetrics(overall, dis_mean, adv_mean, dis_mean - adv_mean)
        out["per_user"][name] = per_user
    return out


def baseline_report(params: ModelParams, splits: SplitDataset, groups, k: int,
                    mode: str = "reuse") -> EvaluationReport:
    """Evaluate the unaugmented state; reference point for every policy run."""
    measured = measure(params, splits, groups, k)
    return EvaluationReport(BASELINE_POLICY, mode, k, 0,
                            measured["perturbation"], measured["test"])


def evaluate(params: ModelParams, splits: SplitDataset, groups, k: int,
             baseline: EvaluationReport, *, policy: str, mode: str = "reuse",
             num_added_edges: int = 0, runtime_seconds: float | None = None) -> EvaluationReport:
    """Evaluate finalized splits against the baseline report."""
    if baseline is None:
        raise ValueError("evaluate: missing baseline report; measure the "
                         "unaugmented state first (baseline_report)")
    measured = measure(params, splits, groups, k)
    return EvaluationReport(policy, mode, k, num_added_edges,
                            measured["perturbation"], measured["test"],
                            baseline_perturbation=baseline.perturbation,
                            baseline_test=baseline.test,
                            runtime_seconds=runtime_seconds)


def _fmt(value, decimals: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{decimals}f}"


def _fmt_pct(value) -> str:
    return "n/a" if value is None else f"{value:+.1f}%"


def _render(headers: list, rows: list) -> str:
    widths = [max(len(h), *(len(r[c]) for r in rows)) if rows else len(h)
              for c, h in enumerate(headers)]
    def line(cells):
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), rule] + [line(r) for r in rows])


def policy_table(reports: list) -> str:
    """Mitigation view: per policy, the group gap before/after and its change.

    Entries may be EvaluationReport values or bare policy-name strings for
    runs that produced no report (rendered as n/a). Negative percentage cells
    carry a ``*`` marker: the gap shrank, i.e. unfairness was mitigated.
    """
    if not reports:
        raise ValueError("policy_table: at least one report required")
    headers = ["policy", "edges"]
    for which in SETS:
        headers += [f"{which}|dNDCG|pre", f"{which}|dNDCG|post", f"{which} rel.diff"]
    rows = []
    for rep in reports:
        if not isinstance(rep, EvaluationReport):
            rows.append([str(rep), "n/a"] + ["n/a"] * 6)
            continue
        cells = [rep.policy, str(rep.num_added_edges)]
        for which in SETS:
            base = rep.baseline_metrics(which)
            cells.append(_fmt(abs(base.delta_ndcg)) if base else "n/a")
            cells.append(_fmt(abs(rep.set_metrics(which).delta_ndcg)))
            rel = rep.rel_diff_delta(which)
            mark = "*" if rel is not None and rel < 0 else ""
            cells.append(_fmt_pct(rel) + mark)
        rows.append(cells)
    return _render(headers, rows) + "\n(* = gap reduced relative to baseline)"


def tradeoff_table(reports: list) -> str:
    """Utility/disparity view with best and second-best flags per column.

    Highest NDCG is best; smallest |deltaNDCG| is best. Ties share a flag.
    """
    if not reports:
        raise ValueError("tradeoff_table: at least one report required")
    real = [r for r in reports if isinstance(r, EvaluationReport)]

    def column_value(rep, which, kind):
        return (rep.set_metrics(which).ndcg if kind == "ndcg"
                else abs(rep.set_metrics(which).delta_ndcg))

    ranked = {}   # (which, kind) -> distinct values, best first
    for which in SETS:
        ranked[which, "ndcg"] = sorted({column_value(r, which, "ndcg") for r in real},
                                       reverse=True)
        ranked[which, "gap"] = sorted({column_value(r, which, "gap") for r in real})

    headers = ["policy", "edges"]
    for which in SETS:
        headers += [f"{which} NDCG", f"{which} |dNDCG|"]
    rows = []
    for rep in reports:
        if not isinstance(rep, EvaluationReport):
            rows.append([str(rep), "n/a"] + ["n/a"] * 4)
            continue
        cells = [rep.policy, str(rep.num_added_edges)]
        for which in SETS:
            for kind in ("ndcg", "gap"):
                value = column_value(rep, which, kind)
                order = ranked[which, kind]
                mark = ""
                if order and value == order[0]:
                    mark = "*"
                elif len(order) > 1 and value == order[1]:
                    mark = "+"
                cells.append(_fmt(value) + mark)
        rows.append(cells)
    return _render(headers, rows) + "\n(* = best column value, + = second best; ties share flags)"


_TSV_COLUMNS = ["policy", "mode", "k", "num_added_edges"]
for _which in SETS:
    _TSV_COLUMNS += [f"{_which}_ndcg", f"{_which}_disadvantaged_mean",
                     f"{_which}_advantaged_mean", f"{_which}_delta_ndcg",
                     f"{_which}_baseline_ndcg", f"{_which}_baseline_delta_ndcg",
                     f"{_which}_rel_diff_ndcg", f"{_which}_rel_diff_delta_ndcg"]


def _tsv_cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_tsv(path, reports: list) -> None:
    """Machine-readable table, one row per report, full-precision floats.

    Runtime is deliberately absent: the file must be byte-identical across
    repeated same-seed runs, which wall-clock time is not.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + "\t".join(_TSV_COLUMNS) + "\n")
        for rep in reports:
            if not isinstance(rep, EvaluationReport):
                continue   # failed runs have no measurements to serialize
            cells = [rep.policy, rep.mode, rep.k, rep.num_added_edges]
            for which in SETS:
                own = rep.set_metrics(which)
                base = rep.baseline_metrics(which)
                cells += [own.ndcg, own.disadvantaged_mean, own.advantaged_mean, own.delta_ndcg,
                          base.ndcg if base else None, base.delta_ndcg if base else None,
                          rep.rel_diff_ndcg(which), rep.rel_diff_delta(which)]
            fh.write("\t".join(_tsv_cell(c) for c in cells) + "\n")


def read_report_tsv(path) -> list:
    """Parse rows written by :func:`write_report_tsv` into value dicts."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split("\t")
            row = {}
            for name, cell in zip(_TSV_COLUMNS, cells):
                if name in ("policy", "mode"):
                    row[name] = cell
                elif name in ("k", "num_added_edges"):
                    row[name] = int(cell)
                else:
                    row[name] = None if cell == "n/a" else float(cell)
            rows.append(row)
    return rows


def write_report_txt(path, reports: list, preamble: str = "") -> None:
    """Aligned human-readable report: both tables plus per-run runtimes."""
    parts = []
    if preamble:
        parts.append(preamble.rstrip("\n"))
    parts.append("== mitigation by policy ==")
    parts.append(policy_table(reports))
    parts.append("")
    parts.append("== utility / disparity trade-off ==")
    parts.append(tradeoff_table(reports))
    timed = [r for r in reports
             if isinstance(r, EvaluationReport) and r.runtime_seconds is not None]
    if timed:
        parts.append("")
        parts.append("== augmentation runtimes ==")
        for rep in timed:
            parts.append(f"{rep.policy}: {rep.runtime_seconds:.1f}s")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_scatter_tsv(path, reports: list) -> None:
    """x/y pairs for trade-off plots: utility change vs gap change, per set."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# policy\tset\trel_diff_ndcg\trel_diff_delta_ndcg\n")
        for rep in reports:
            if not isinstance(rep, EvaluationReport) or rep.policy == BASELINE_POLICY:
                continue
            for which in SETS:
                x, y = rep.rel_diff_ndcg(which), rep.rel_diff_delta(which)
                fh.write(f"{rep.policy}\t{which}\t{_tsv_cell(x)}\t{_tsv_cell(y)}\n")
