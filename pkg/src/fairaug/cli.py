"""Command-line pipeline: ``split | train | augment | evaluate | sweep``.

Configuration lives in an INI file (sections below); command-line flags
override file values, which override built-in defaults. Every augmentation
run directory receives the fully resolved config plus content hashes of its
inputs, so results stay attributable.

    [data]    interactions, attributes
    [run]     out, seed, k, policy, policies, retrain
    [model]   embedding_dim, num_layers, learning_rate, epochs, reg, batch_size
    [augment] learning_rate, max_epochs, beta, temperature, fairness_target,
              psi_u, psi_i
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import augment as augmentation
from . import dataset, figures, lightgcn, metrics, policies, report
from .graph import build_candidate_space, build_graph, normalized_adjacency

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


class PipelineError(RuntimeError):
    """A stage's input artifact is missing; the message names the fix."""


@dataclass
class RunConfig:
    interactions: str = ""
    attributes: str = ""
    out: str = "out"
    seed: int = 0
    k: int = 10
    policy: str = "bm"
    policies: str = ",".join(policies.POLICY_NAMES)
    retrain: bool = False
    embedding_dim: int = 64
    num_layers: int = 2
    model_learning_rate: float = 1e-3
    epochs: int = 150
    reg: float = 1e-4
    batch_size: int = 1024
    augment_learning_rate: float = 0.1
    max_epochs: int = 100
    beta: float = 0.5
    temperature: float = 0.1
    fairness_target: float | None = None
    psi_u: float = 0.35
    psi_i: float = 0.20


# (section, key) -> (attribute, parser)
def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text: str):
    low = text.strip().lower()
    return None if low in ("", "none") else float(text)


_SCHEMA = {
    ("data", "interactions"): ("interactions", str),
    ("data", "attributes"): ("attributes", str),
    ("run", "out"): ("out", str),
    ("run", "seed"): ("seed", int),
    ("run", "k"): ("k", int),
    ("run", "policy"): ("policy", str),
    ("run", "policies"): ("policies", str),
    ("run", "retrain"): ("retrain", _parse_bool),
    ("model", "embedding_dim"): ("embedding_dim", int),
    ("model", "num_layers"): ("num_layers", int),
    ("model", "learning_rate"): ("model_learning_rate", float),
    ("model", "epochs"): ("epochs", int),
    ("model", "reg"): ("reg", float),
    ("model", "batch_size"): ("batch_size", int),
    ("augment", "learning_rate"): ("augment_learning_rate", float),
    ("augment", "max_epochs"): ("max_epochs", int),
    ("augment", "beta"): ("beta", float),
    ("augment", "temperature"): ("temperature", float),
    ("augment", "fairness_target"): ("fairness_target", _parse_optional_float),
    ("augment", "psi_u"): ("psi_u", float),
    ("augment", "psi_i"): ("psi_i", float),
}


def load_config(path, into: RunConfig | None = None) -> RunConfig:
    """Parse an INI config, rejecting unknown sections and keys outright."""
    cfg = into or RunConfig()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    known_sections = {section for section, _ in _SCHEMA}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        for key, raw in parser.items(section):
            if (section, key) not in _SCHEMA:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            attr, parse = _SCHEMA[section, key]
            try:
                setattr(cfg, attr, parse(raw))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for [{section}] {key}: {exc}") from exc
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Resolved config as INI text (the provenance copy in run directories)."""
    lines = []
    by_section: dict = {}
    for (section, key), (attr, _) in _SCHEMA.items():
        by_section.setdefault(section, []).append((key, getattr(cfg, attr)))
    for section in ("data", "run", "model", "augment"):
        lines.append(f"[{section}]")
        for key, value in by_section[section]:
            lines.append(f"{key} = {'none' if value is None else value}")
        lines.append("")
    return "\n".join(lines)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairaug",
        description="Mitigate consumer-group unfairness in graph recommendations "
                    "by learning a minimal set of edges to add to the interaction graph.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="INI config file")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--k", type=int, metavar="N", help="cutoff for NDCG@k and top-k lists")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        return sp

    common(sub.add_parser("split", help="write train/validation/test TSV files"))
    common(sub.add_parser("train", help="train the recommender, save the checkpoint"))

    sp = common(sub.add_parser("augment", help="learn fairness-mitigating edges for one policy"))
    sp.add_argument("--policy", metavar="NAME",
                    help="one of " + ", ".join(policies.POLICY_NAMES))
    sp.add_argument("--max-epochs", type=int, metavar="N")
    sp.add_argument("--beta", type=float, metavar="F", help="perturbation-size penalty weight")
    sp.add_argument("--lr", type=float, metavar="F", help="augmentation learning rate")
    sp.add_argument("--temperature", type=float, metavar="F", help="rank-smoothing temperature")
    sp.add_argument("--fairness-target", type=float, metavar="F",
                    help="stop once the exact |group gap| falls this low")

    common(sub.add_parser("evaluate", help="score all augmentation runs against the baseline"))

    sp = common(sub.add_parser("sweep", help="augment with every policy, then evaluate"))
    sp.add_argument("--policies", metavar="LIST", help="comma-separated policy names")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for flag, attr in (("seed", "seed"), ("k", "k"), ("out", "out"),
                       ("policy", "policy"), ("max_epochs", "max_epochs"),
                       ("beta", "beta"), ("lr", "augment_learning_rate"),
                       ("temperature", "temperature"),
                       ("fairness_target", "fairness_target"),
                       ("policies", "policies")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


@dataclass
class PipelineState:
    """Everything derived from the input files that stages share."""

    ds: dataset.InteractionDataset
    split: dataset.SplitDataset
    graph: "object"
    relevants: dict                 # perturbation-set ground truth
    partition: dataset.GroupPartition
    params: lightgcn.ModelParams | None = None
    topk_lists: dict | None = None
    designation: metrics.GroupUtility | None = None
    disadvantaged_users: list | None = None
    advantaged_users: list | None = None

    @property
    def groups(self):
        return (self.disadvantaged_users, self.advantaged_users)


def _load_state(cfg: RunConfig) -> PipelineState:
    if not cfg.interactions or not cfg.attributes:
        raise ConfigError("set [data] interactions and [data] attributes "
                          "(TSV paths) in the config file")
    for label, path in (("interactions", cfg.interactions), ("attributes", cfg.attributes)):
        if not os.path.exists(path):
            raise ConfigError(f"{label} file not found: {path}")
    ds = dataset.load_interactions(cfg.interactions, cfg.attributes)
    split = dataset.temporal_split(ds)
    graph = build_graph(split.train, ds.num_users, ds.num_items)
    relevants = dataset.relevants_by_user(split.validation)
    partition = dataset.group_partition(ds)
    return PipelineState(ds, split, graph, relevants, partition)


def _checkpoint_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out, "model.ckpt")


def _attach_model(cfg: RunConfig, state: PipelineState) -> None:
    """Load the checkpoint and compute the baseline designation it induces."""
    path = _checkpoint_path(cfg)
    if not os.path.exists(path):
        raise PipelineError(f"no model checkpoint at {path}; run train first")
    params = lightgcn.load_checkpoint(path)
    if params.num_users != state.ds.num_users or params.num_items != state.ds.num_items:
        raise PipelineError(f"checkpoint at {path} was trained on a different dataset "
                            f"({params.num_users} users / {params.num_items} items); re-run train")
    operator = normalized_adjacency(state.graph)
    users_final, items_final = lightgcn.propagate(params, operator)
    scores = lightgcn.predict_scores(users_final.value, items_final.value)
    train_items = {}
    for u, i in state.graph.edges:
        train_items.setdefault(int(u), set()).add(int(i))
    topk_lists = lightgcn.topk(scores, cfg.k, train_items)
    per_user = metrics.ndcg_map(topk_lists, state.relevants, cfg.k)
    designation = metrics.designate_groups(per_user, state.partition)
    active = lambda u: state.graph.user_degree[u] > 0
    state.params = params
    state.topk_lists = topk_lists
    state.designation = designation
    state.disadvantaged_users = [int(u) for u in state.partition.members[designation.disadvantaged]
                                 if active(int(u))]
    state.advantaged_users = [int(u) for u in state.partition.members[designation.advantaged]
                              if active(int(u))]


def _train_config(cfg: RunConfig) -> lightgcn.TrainConfig:
    return lightgcn.TrainConfig(embedding_dim=cfg.embedding_dim, num_layers=cfg.num_layers,
                                learning_rate=cfg.model_learning_rate, epochs=cfg.epochs,
                                reg=cfg.reg, batch_size=cfg.batch_size, k=cfg.k, seed=cfg.seed)


def _augment_config(cfg: RunConfig) -> augmentation.AugmentConfig:
    return augmentation.AugmentConfig(learning_rate=cfg.augment_learning_rate,
                                      max_epochs=cfg.max_epochs, beta=cfg.beta,
                                      temperature=cfg.temperature, k=cfg.k, seed=cfg.seed,
                                      fairness_target=cfg.fairness_target)


def cmd_split(cfg: RunConfig, args) -> int:
    state = _load_state(cfg)
    out_dir = os.path.join(cfg.out, "split")
    os.makedirs(out_dir, exist_ok=True)
    dataset.export_split(state.split, state.ds, out_dir)
    for name, rows in (("train", state.split.train), ("validation", state.split.validation),
                       ("test", state.split.test)):
        print(f"{name}: {len(rows)} interactions -> {os.path.join(out_dir, name + '.tsv')}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    state = _load_state(cfg)
    params = lightgcn.train_bpr(state.graph, _train_config(cfg), state.relevants)
    os.makedirs(cfg.out, exist_ok=True)
    path = _checkpoint_path(cfg)
    lightgcn.save_checkpoint(params, path)
    operator = normalized_adjacency(state.graph)
    train_items = {}
    for u, i in state.graph.edges:
        train_items.setdefault(int(u), set()).add(int(i))
    score = lightgcn.validation_ndcg(params, operator, state.relevants, train_items, cfg.k)
    print(f"validation NDCG@{cfg.k}: {score:.4f}")
    print(f"checkpoint: {path}")
    return 0


def _write_provenance(cfg: RunConfig, run_dir: str) -> None:
    with open(os.path.join(run_dir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    inputs = [cfg.interactions, cfg.attributes, _checkpoint_path(cfg)]
    with open(os.path.join(run_dir, "inputs.sha256"), "w", encoding="utf-8") as fh:
        for path in inputs:
            fh.write(f"{_sha256(path)}  {path}\n")


def _run_augment(cfg: RunConfig, state: PipelineState, policy_name: str) -> dict:
    """One policy's augmentation run; returns a summary for printing."""
    spec = policies.parse_policy(policy_name, cfg.psi_u, cfg.psi_i)
    context = policies.PolicyContext(
        graph=state.graph, disadvantaged_users=np.asarray(state.disadvantaged_users),
        advantaged_users=np.asarray(state.advantaged_users),
        topk_lists=state.topk_lists, perturbation_relevants=state.relevants, k=cfg.k)
    users, items = policies.apply_policy(spec, context)
    space = build_candidate_space(state.graph, users, items,
                                  disadvantaged=state.disadvantaged_users)
    started = time.perf_counter()
    result = augmentation.optimize(state.params, state.graph, space, state.groups,
                                   state.relevants, _augment_config(cfg))
    runtime = time.perf_counter() - started

    run_dir = os.path.join(cfg.out, "runs", spec.name)
    os.makedirs(run_dir, exist_ok=True)
    augmentation.write_added_edges(os.path.join(run_dir, "added_edges.tsv"),
                                   result, state.ds.user_ids, state.ds.item_ids)
    augmentation.write_trace(os.path.join(run_dir, "trace.tsv"), result)
    augmentation.write_summary(os.path.join(run_dir, "result.json"), result, extra={
        "policy": spec.name, "seed": cfg.seed, "k": cfg.k,
        "disadvantaged_group": state.designation.disadvantaged,
        "advantaged_group": state.designation.advantaged,
        "num_candidate_users": int(len(users)), "num_candidate_items": int(len(items)),
        "num_candidate_pairs": int(space.size), "runtime_seconds": runtime,
    })
    _write_provenance(cfg, run_dir)
    figures.render_trace(result.loss_trace, os.path.join(run_dir, "trace.png"),
                         title=f"policy {spec.name}")
    return {"policy": spec.name, "run_dir": run_dir, "result": result,
            "candidates": space.size, "runtime": runtime}


def cmd_augment(cfg: RunConfig, args) -> int:
    state = _load_state(cfg)
    _attach_model(cfg, state)
    summary = _run_augment(cfg, state, cfg.policy)
    result = summary["result"]
    print(f"policy {summary['policy']}: {summary['candidates']} candidate pairs, "
          f"best epoch {result.best_epoch} with {len(result.added_edges)} added edges")
    print(f"|group gap| {result.before['abs_delta_ndcg']:.4f} -> "
          f"{result.after['abs_delta_ndcg']:.4f} on the perturbation set")
    print(f"run directory: {summary['run_dir']}")
    return 0


def _read_added_edges(path) -> list:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            u, i = line.split("\t")[:2]
            edges.append((int(u), int(i)))
    return edges


def _evaluate_runs(cfg: RunConfig, state: PipelineState, failed: list | None = None) -> int:
    runs_root = os.path.join(cfg.out, "runs")
    run_names = sorted(os.listdir(runs_root)) if os.path.isdir(runs_root) else []
    run_names = [n for n in run_names
                 if os.path.exists(os.path.join(runs_root, n, "added_edges.tsv"))]
    if not run_names:
        raise PipelineError(f"no augmentation runs under {runs_root}; run augment first")

    mode = "retrain" if cfg.retrain else "reuse"
    baseline = report.baseline_report(state.params, state.split, state.groups, cfg.k, mode)
    reports: list = [baseline]
    for name in run_names:
        run_dir = os.path.join(runs_root, name)
        edges = _read_added_edges(os.path.join(run_dir, "added_edges.tsv"))
        stub = augmentation.AugmentationResult(edges, [], 0, {}, {})
        finalized = augmentation.finalize(stub, state.split)
        runtime = None
        result_path = os.path.join(run_dir, "result.json")
        if os.path.exists(result_path):
            with open(result_path, encoding="utf-8") as fh:
                runtime = json.load(fh).get("runtime_seconds")
        if cfg.retrain:
            graph = build_graph(finalized.train, state.ds.num_users, state.ds.num_items)
            eval_params = lightgcn.train_bpr(graph, _train_config(cfg),
                                             dataset.relevants_by_user(finalized.validation))
        else:
            eval_params = state.params
        reports.append(report.evaluate(eval_params, finalized, state.groups, cfg.k, baseline,
                                       policy=name, mode=mode, num_added_edges=len(edges),
                                       runtime_seconds=runtime))
    reports.extend(sorted(failed or []))

    preamble = (f"dataset: {cfg.interactions}\nmode: {mode} (inference on the augmented "
                f"train graph)\nk: {cfg.k}  seed: {cfg.seed}")
    report.write_report_tsv(os.path.join(cfg.out, "report.tsv"), reports)
    report.write_report_txt(os.path.join(cfg.out, "report.txt"), reports, preamble)
    report.write_scatter_tsv(os.path.join(cfg.out, "scatter.tsv"), reports)
    points = [(rep.policy, rep.rel_diff_ndcg("test"), rep.rel_diff_delta("test"))
              for rep in reports
              if isinstance(rep, report.EvaluationReport) and rep.policy != report.BASELINE_POLICY]
    figures.render_scatter(points, os.path.join(cfg.out, "scatter.png"),
                           title=f"test-set trade-off (k={cfg.k})")
    with open(os.path.join(cfg.out, "report.txt"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    for artifact in ("report.tsv", "report.txt", "scatter.tsv", "scatter.png"):
        logger.info("wrote %s", os.path.join(cfg.out, artifact))
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    state = _load_state(cfg)
    _attach_model(cfg, state)
    return _evaluate_runs(cfg, state)


def cmd_sweep(cfg: RunConfig, args) -> int:
    state = _load_state(cfg)
    _attach_model(cfg, state)
    names = [n.strip() for n in cfg.policies.split(",") if n.strip()]
    for name in names:
        policies.parse_policy(name, cfg.psi_u, cfg.psi_i)   # fail fast on typos
    failed = []
    for name in names:
        try:
            summary = _run_augment(cfg, state, name)
        except policies.EmptySelectionError as exc:
            logger.warning("policy %s skipped: %s", name, exc)
            failed.append(name)
            continue
        result = summary["result"]
        print(f"[{name}] {len(result.added_edges)} edges, "
              f"|gap| {result.before['abs_delta_ndcg']:.4f} -> "
              f"{result.after['abs_delta_ndcg']:.4f} ({summary['runtime']:.1f}s)")
    return _evaluate_runs(cfg, state, failed)


_COMMANDS = {"split": cmd_split, "train": cmd_train, "augment": cmd_augment,
             "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
