"""``cognisnn`` command-line entry point.

Every command writes its fully resolved configuration to ``<out>/config.txt``
so a run can be repeated with ``--config <out>/config.txt``.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_float_list, parse_int_list, parse_str_list
from .data import EventTensorDataset, PerturbationSpec, generate_synthetic, load_events
from .errors import CogniSNNError, ConfigError, DataError
from .graph import DirectedAcyclicGraph, generate_graph, rank_pathways, select_key_pathways
from .network import EnergyModel, build_model, count_conv_ops, count_ops_and_energy
from .training import evaluate, kp_lwf, train_dgl, train_standard

COMMANDS = (
    "generate-graph", "analyze-pathways", "train", "train-dgl", "continual",
    "perturb-eval", "timestep-eval", "energy",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cognisnn", description="Random-graph spiking network experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--from", dest="from_path", help="checkpoint whose sibling config/graph seed this run")
        if name == "energy":
            p.add_argument("--fixture", action="store_true", help="report the single-conv hand-count fixture")
        for key in RunConfig.keys():
            flags = {f"--{key}", f"--{key.replace('_', '-')}"}
            p.add_argument(*sorted(flags), dest=key, default=argparse.SUPPRESS, metavar="VALUE")
    return parser


# shared plumbing -----------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the checkpoint's sibling config, then ``--config``, then flags."""
    cfg = RunConfig()
    if args.from_path:
        sibling = Path(args.from_path).parent / "config.txt"
        if sibling.exists():
            cfg = RunConfig.load(sibling)
    if args.config:
        cfg = cfg.with_overrides(_file_keys(args.config))
    overrides = {k: v for k, v in vars(args).items() if k in RunConfig.keys()}
    if args.command == "generate-graph" and "seed" in overrides:
        overrides.setdefault("graph_seed", overrides["seed"])
    return cfg.with_overrides(overrides).resolved()


def _file_keys(path) -> dict[str, object]:
    # only keys written in the file override what came before
    loaded = RunConfig.load(path)
    present = set()
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0]
        if "=" in line:
            present.add(line.split("=", 1)[0].strip())
    return {k: getattr(loaded, k) for k in present}


def load_graph(cfg: RunConfig, from_path: str | None = None) -> DirectedAcyclicGraph:
    if cfg.graph:
        return _read_graph(cfg.graph)
    if from_path:
        sibling = Path(from_path).parent / "graph.rga"
        if sibling.exists():
            return _read_graph(sibling)
    return generate_graph(cfg.graph_spec())


def _read_graph(path) -> DirectedAcyclicGraph:
    try:
        return DirectedAcyclicGraph.load(path)
    except OSError as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc


def load_task(cfg: RunConfig, new_task: bool = False) -> tuple[EventTensorDataset, EventTensorDataset]:
    if cfg.train_data and not new_task:
        try:
            train = load_events(cfg.train_data, "train")
            test = load_events(cfg.test_data, "test") if cfg.test_data else train.subset(slice(0, 0))
        except OSError as exc:
            raise DataError(str(exc)) from exc
        test.class_count = max(test.class_count, train.class_count)
        return train, test
    return generate_synthetic(cfg.task_spec(new_task))


def load_model(cfg: RunConfig, dag: DirectedAcyclicGraph, from_path: str | None, in_channels: int,
               num_classes: int):
    model = build_model(dag, cfg.model_config(in_channels, num_classes))
    if from_path:
        try:
            state = load_checkpoint(from_path)
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {from_path}: {exc}") from exc
        model.load_state_dict(state)
    return model


def prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    return out


def write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


# commands ------------------------------------------------------------------


def cmd_generate_graph(cfg: RunConfig, args) -> int:
    dag = load_graph(cfg)
    out = prepare_out(cfg)
    dag.save(out / "graph.rga")
    (out / "graph.dot").write_text(dag.to_dot())
    print(f"graph: {dag.node_count} nodes, {len(dag.edges)} edges -> {out / 'graph.rga'}")
    return 0


def cmd_analyze_pathways(cfg: RunConfig, args) -> int:
    dag = load_graph(cfg, args.from_path)
    out = prepare_out(cfg)
    ranking = rank_pathways(dag)
    rows = [(i + 1, repr(bc), p.length, "-".join(map(str, p.nodes))) for i, (p, bc) in enumerate(ranking.pathways)]
    write_csv(out / "pathways.csv", "rank,bc,length,nodes", rows)
    sel = select_key_pathways(ranking, cfg.k, cfg.scenario)
    (out / "selection.dot").write_text(dag.to_dot(highlight_edges=sel.trainable_edges))
    for p in sel.selected:
        print(f"{cfg.scenario} key pathway: {p}")
    print(f"{ranking.total} pathways -> {out / 'pathways.csv'}")
    return 0


def _train(cfg: RunConfig, args, growth: bool) -> int:
    dag = load_graph(cfg, args.from_path)
    train, test = load_task(cfg)
    model = load_model(cfg, dag, args.from_path, train.frame_shape[0], train.class_count)
    out = prepare_out(cfg)
    if growth:
        log = train_dgl(model, train, cfg.train_config(), rank_pathways(dag), test)
    else:
        log = train_standard(model, train, cfg.train_config(), test)
    (out / "metrics.csv").write_text(log.to_csv())
    save_checkpoint(out / "model.ckpt", model.state_dict())
    dag.save(out / "graph.rga")
    last = log.rows[-1]
    print(f"epoch {last['epoch']} {last['split']} accuracy {last['accuracy']:.4f} -> {out / 'metrics.csv'}")
    return 0


def cmd_train(cfg, args) -> int:
    return _train(cfg, args, growth=False)


def cmd_train_dgl(cfg, args) -> int:
    return _train(cfg, args, growth=True)


def cmd_continual(cfg: RunConfig, args) -> int:
    if not args.from_path:
        raise ConfigError("continual needs --from <old model checkpoint>")
    dag = load_graph(cfg, args.from_path)
    old_train, old_test = load_task(cfg)
    new_train, new_test = load_task(cfg, new_task=True)
    old = load_model(cfg, dag, args.from_path, old_train.frame_shape[0], old_train.class_count)
    sel = select_key_pathways(rank_pathways(dag), cfg.k, cfg.scenario)
    out = prepare_out(cfg)
    model, log = kp_lwf(old, new_train, cfg.continual_config(), sel, cfg.train_config(), new_test, old_test)
    (out / "metrics.csv").write_text(log.to_csv())
    save_checkpoint(out / "model.ckpt", model.state_dict())
    dag.save(out / "graph.rga")
    (out / "selection.txt").write_text("\n".join(str(p) for p in sel.selected) + "\n")
    print(f"continual ({cfg.scenario}, K={cfg.k}) -> {out / 'metrics.csv'}")
    return 0


def _eval_job(job):
    state, dag_text, cfg_text, head, kind, rho, timesteps = job
    cfg = RunConfig.from_text(cfg_text)
    dag = DirectedAcyclicGraph.from_text(dag_text)
    _, test = load_task(cfg, new_task=head != "head")
    model = build_model(dag, cfg.model_config(test.frame_shape[0], cfg.classes))
    model.load_state_dict(state)
    pert = PerturbationSpec(kind, rho, cfg.perturb_seed, cfg.poisson_base) if kind else None
    return evaluate(model, test, timesteps, pert, head)


def _run_jobs(jobs, n_workers: int):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(_eval_job, jobs))
    return [_eval_job(j) for j in jobs]


def _eval_setup(cfg: RunConfig, args):
    dag = load_graph(cfg, args.from_path)
    _, test = load_task(cfg, new_task=cfg.head != "head")
    test.require_nonempty()
    model = load_model(cfg, dag, args.from_path, test.frame_shape[0], cfg.classes)
    if cfg.head not in model.heads:
        raise ConfigError(f"model has no head {cfg.head!r}")
    return dag, model, test


def cmd_perturb_eval(cfg: RunConfig, args) -> int:
    dag, model, _ = _eval_setup(cfg, args)
    out = prepare_out(cfg)
    combos = sorted((k, r) for k in parse_str_list(cfg.kinds) for r in parse_float_list(cfg.rhos))
    for kind, rho in combos:
        PerturbationSpec(kind, rho)  # validate before fanning out
    state, text = model.state_dict(), cfg.to_text()
    jobs = [(state, dag.to_text(), text, cfg.head, k, r, None) for k, r in combos]
    results = _run_jobs(jobs, cfg.jobs)
    rows = [(k, f"{r:g}", f"{loss:.8f}", f"{acc:.6f}") for (k, r), (loss, acc) in zip(combos, results)]
    write_csv(out / "perturb.csv", "kind,rho,loss,accuracy", rows)
    print(f"{len(rows)} perturbation settings -> {out / 'perturb.csv'}")
    return 0


def cmd_timestep_eval(cfg: RunConfig, args) -> int:
    dag, model, test = _eval_setup(cfg, args)
    out = prepare_out(cfg)
    steps = parse_int_list(cfg.eval_timesteps) or tuple(range(1, test.timesteps + 1))
    for t in steps:
        if not 1 <= t <= test.timesteps:
            raise ConfigError(f"inference timesteps {t} outside [1, {test.timesteps}]")
    state, text = model.state_dict(), cfg.to_text()
    jobs = [(state, dag.to_text(), text, cfg.head, None, 0.0, t) for t in sorted(steps)]
    results = _run_jobs(jobs, cfg.jobs)
    rows = [(t, f"{loss:.8f}", f"{acc:.6f}") for t, (loss, acc) in zip(sorted(steps), results)]
    write_csv(out / "timesteps.csv", "timesteps,loss,accuracy", rows)
    print(f"{len(rows)} inference lengths -> {out / 'timesteps.csv'}")
    return 0


def cmd_energy(cfg: RunConfig, args) -> int:
    out = prepare_out(cfg)
    energy = EnergyModel()
    if args.fixture:
        n_mac, n_ac = count_conv_ops(np.ones((1, 1, 4, 4)), out_channels=1, kernel=3, padding=0)
        rows = [("conv", "mac", n_mac), ("conv", "ac", n_ac)]
    else:
        dag, model, test = _eval_setup(cfg, args)
        report = count_ops_and_energy(model, test.x, energy)
        n_mac, n_ac, rows = report.n_mac, report.n_ac, report.rows
    write_csv(out / "energy.csv", "node,op_type,count", rows)
    pj = energy.energy_pj(n_mac, n_ac)
    write_csv(out / "energy_summary.csv", "n_mac,n_ac,energy_pj,energy_mj",
              [(n_mac, n_ac, f"{pj:.6f}", f"{pj * 1e-9:.12e}")])
    print(f"n_mac={n_mac} n_ac={n_ac} energy={pj:.1f} pJ ({pj * 1e-9:.6e} mJ)")
    return 0


HANDLERS = {
    "generate-graph": cmd_generate_graph,
    "analyze-pathways": cmd_analyze_pathways,
    "train": cmd_train,
    "train-dgl": cmd_train_dgl,
    "continual": cmd_continual,
    "perturb-eval": cmd_perturb_eval,
    "timestep-eval": cmd_timestep_eval,
    "energy": cmd_energy,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except CogniSNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
