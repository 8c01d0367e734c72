"""``kgcn`` command line: data generation, partitioning, training, evaluation and checks.

Exit codes: 0 success, 1 a verification failed, 2 usage or input error.
Every command writes a run manifest (JSON) next to its outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path


from . import __version__
from .equivalence import EquivalenceViolation, directional_dataset, expressivity_demo, verify_grid_equivalence
from .graph import (
    CONNECTIVITIES,
    DATA_FILES,
    Dataset,
    DatasetError,
    GraphError,
    community_dataset,
    grid_graph,
    load_dataset,
    read_graph,
    save_dataset,
    write_edges,
)
from .labeling import LABELING_NAMES, LabelingError
from .model import (
    LayerParams,
    ModelConfig,
    ModelError,
    gradient_check,
    init_params,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
)
from .partition import (
    PartitionCacheError,
    PartitionError,
    PartitionSet,
    load_partitions,
    partition_all,
    resolve_threads,
    save_partitions,
)
from .training import TrainConfig, TrainingDiverged, evaluate, train

GRADCHECK_TOL = 1e-4
EQUIVALENCE_TOL = 1e-10
INPUT_ERRORS = (
    DatasetError,
    GraphError,
    LabelingError,
    ModelError,
    PartitionError,
    PartitionCacheError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)


class VerificationFailed(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects what a command read and wrote, then emits the manifest."""

    def __init__(self, command: str, argv: list[str], args: argparse.Namespace):
        self.command = command
        self.argv = argv
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items()
            if k not in ("func", "manifest")
        }
        self.started = datetime.now(timezone.utc).isoformat()
        self.manifest_path: Path | None = args.manifest

    def read(self, path) -> Path:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = _sha256(path)
        return path

    def wrote(self, path) -> None:
        self.outputs.append(str(path))

    def default_manifest(self, path) -> None:
        if self.manifest_path is None:
            self.manifest_path = Path(path)

    def finish(self, status: str) -> None:
        path = self.manifest_path or Path(f"kgcn-{self.command}.manifest.json")
        doc = {
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "config": self.config,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "status": status,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _write_json(run: Run, path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    run.wrote(path)


# -- run config -----------------------------------------------------------------


def _load_run_config(run: Run, path: Path, seed: int | None):
    cfg_path = run.read(path)
    doc = json.loads(cfg_path.read_text())
    unknown = set(doc) - {"model", "train", "data", "partitions", "output"}
    if unknown:
        raise ValueError(f"{path}: unknown run config keys {sorted(unknown)}")
    base = cfg_path.parent
    model_doc = dict(doc.get("model", {}))
    if seed is not None:
        model_doc["seed"] = seed
    model = ModelConfig.from_dict(model_doc)
    train_cfg = TrainConfig.from_dict(doc.get("train", {}))
    data = doc.get("data")
    if not data:
        raise ValueError(f"{path}: 'data' section is required")
    if "dir" in data:
        files = {k: base / data["dir"] / v for k, v in DATA_FILES.items()}
    else:
        files = {k: base / data[k] for k in DATA_FILES}
    dataset = load_dataset(*(run.read(files[k]) for k in ("edges", "features", "labels", "masks")))
    cache = base / doc["partitions"] if doc.get("partitions") else None
    out = base / doc.get("output", "run")
    run.config["resolved"] = {
        "model": model.to_dict(),
        "train": train_cfg.to_dict(),
        "data": {k: str(v) for k, v in files.items()},
        "partitions": str(cache) if cache else None,
        "output": str(out),
    }
    return model, train_cfg, dataset, cache, out


def _partitions_for(run: Run, model: ModelConfig, dataset: Dataset, cache: Path | None, threads) -> PartitionSet | None:
    if model.arch == "gcn":
        return None
    if cache is not None and cache.exists():
        ps = load_partitions(run.read(cache), dataset.graph)
        if ps.labeling != model.labeling or ps.c != model.c:
            raise PartitionCacheError(
                f"{cache}: cached ({ps.labeling}, c={ps.c}) but config wants ({model.labeling}, c={model.c})"
            )
        return ps
    ps = partition_all(dataset.graph, model.labeling, model.c, threads)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_partitions(ps, cache)
        run.wrote(cache)
    return ps


# -- commands -------------------------------------------------------------------


def cmd_gen_grid(run: Run, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.default_manifest(out / "manifest.json")
    if args.task == "directional":
        ds = directional_dataset(args.height, args.width, seed=args.seed)
        save_dataset(ds, out)
        for name in DATA_FILES.values():
            run.wrote(out / name)
    else:
        g = grid_graph(args.height, args.width, args.connectivity)
        write_edges(g, out / DATA_FILES["edges"])
        run.wrote(out / DATA_FILES["edges"])
    print(f"wrote {args.height}x{args.width} {args.connectivity} grid to {out}")
    return 0


def cmd_gen_community(run: Run, args) -> int:
    out = Path(args.out)
    run.default_manifest(out / "manifest.json")
    ds = community_dataset(args.nodes, args.classes, args.features, seed=args.seed)
    save_dataset(ds, out)
    for name in DATA_FILES.values():
        run.wrote(out / name)
    print(f"wrote community graph n={args.nodes} m={ds.graph.num_edges} to {out}")
    return 0


def cmd_partition(run: Run, args) -> int:
    out = Path(args.out)
    run.default_manifest(out.with_name(out.name + ".manifest.json"))
    g = read_graph(run.read(args.graph), args.num_nodes)
    ps = partition_all(g, args.labeling, args.c, args.threads)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_partitions(ps, out)
    run.wrote(out)
    print(f"partitioned {g.num_nodes} nodes ({args.labeling}, c={args.c}) -> {out}")
    return 0


def cmd_train(run: Run, args) -> int:
    model, tc, dataset, cache, out = _load_run_config(run, args.config, args.seed)
    if args.out is not None:
        out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.default_manifest(out / "manifest.json")
    ps = _partitions_for(run, model, dataset, cache, args.threads)
    params, report = train(model, tc, dataset, ps)
    save_checkpoint(out / "checkpoint.json", model, params, {"best_epoch": report.best_epoch})
    run.wrote(out / "checkpoint.json")
    _write_json(run, out / "report.json", report.metrics())
    (out / "report.txt").write_text(report.table() + "\n")
    run.wrote(out / "report.txt")
    run.config["wall_time"] = report.wall_time
    last = len(report.train_loss) - 1
    test = "n/a" if report.test_accuracy is None else f"{report.test_accuracy:.4f}"
    print(
        f"epochs={len(report.train_loss)} final_loss={report.train_loss[last]:.6f} "
        f"train_acc={report.train_accuracy[last]:.4f} best_epoch={report.best_epoch} test_acc={test}"
    )
    return 0


def cmd_eval(run: Run, args) -> int:
    config, params, _ = load_checkpoint(run.read(args.checkpoint))
    data = Path(args.data)
    dataset = load_dataset(*(run.read(data / DATA_FILES[k]) for k in ("edges", "features", "labels", "masks")))
    if args.out:
        run.default_manifest(Path(str(args.out) + ".manifest.json"))
    cache = Path(args.partitions) if args.partitions else None
    ps = _partitions_for(run, config, dataset, cache, args.threads)
    acc = evaluate(params, config, dataset, ps, dataset.mask(args.mask))
    print(f"accuracy[{args.mask}]={acc:.6f}")
    if args.out:
        _write_json(run, args.out, {"mask": args.mask, "accuracy": acc, "checkpoint": str(args.checkpoint)})
    return 0


def _sabotaged(*a, **kw):
    loss, grads, logits = loss_and_grads(*a, **kw)
    return loss, [LayerParams(g.filters * 1.5, g.bias * 1.5) for g in grads], logits


def cmd_gradcheck(run: Run, args) -> int:
    model, tc, dataset, cache, _ = _load_run_config(run, args.config, args.seed)
    if args.out:
        run.default_manifest(Path(str(args.out) + ".manifest.json"))
    ps = _partitions_for(run, model, dataset, cache, args.threads)
    params = init_params(model, dataset.num_features)
    fn = _sabotaged if args.sabotage else loss_and_grads
    err = gradient_check(model, dataset, ps, params, args.step, l2=tc.l2, seed=model.seed, loss_grad=fn)
    ok = err <= GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'} max_rel_error={err:.3e} step={args.step}")
    if args.out:
        _write_json(run, args.out, {"max_rel_error": err, "step": args.step, "pass": ok})
    if not ok:
        raise VerificationFailed(f"gradient check error {err:.3e} exceeds {GRADCHECK_TOL}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def cmd_verify_grid(run: Run, args) -> int:
    if args.out:
        run.default_manifest(Path(str(args.out) + ".manifest.json"))
    reports, failures = [], []
    g = grid_graph(args.height, args.width, "moore")
    ps = partition_all(g, "canonical", (2 * args.m - 1) ** 2, args.threads)
    for seed in args.seeds:
        try:
            rep = verify_grid_equivalence(args.height, args.width, args.m, args.k, seed, args.channels, ps=ps)
        except EquivalenceViolation as exc:
            print(f"FAIL seed={seed}: {exc}")
            failures.append(seed)
            continue
        reports.append(rep.to_dict())
        if rep.max_abs_deviation > EQUIVALENCE_TOL:
            failures.append(seed)
        print(rep.summary(EQUIVALENCE_TOL))
    worst = max((r["max_abs_deviation"] for r in reports), default=float("nan"))
    status = "PASS" if not failures else "FAIL"
    print(f"{status} max_dev={worst:.3e} seeds={len(args.seeds)}")
    if args.out:
        _write_json(run, args.out, {"reports": reports, "failed_seeds": failures, "tolerance": EQUIVALENCE_TOL})
    if failures:
        raise VerificationFailed(f"equivalence failed for seeds {failures}")
    return 0


def cmd_expressivity(run: Run, args) -> int:
    if args.out:
        run.default_manifest(Path(str(args.out) + ".manifest.json"))
    rep = expressivity_demo(args.height, args.width, args.seed, args.epochs, args.learning_rate)
    print(rep.summary())
    if args.out:
        _write_json(run, args.out, rep.to_dict())
    if rep.c1_axis_logit_max_diff > 1e-12 or rep.kgcn_train_accuracy < 1.0:
        raise VerificationFailed("expressivity separation not observed")
    return 0


def cmd_rerun(run: Run, args) -> int:
    doc = json.loads(Path(args.manifest_file).read_text())
    argv = list(doc["argv"])
    print(f"replaying: kgcn {' '.join(argv)}")
    with _chdir(doc["cwd"]):
        return main(argv)


@contextlib.contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# -- parser ---------------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--seed", type=int, default=None, help="overrides every seed the command uses")
    common.add_argument("--threads", type=_positive, default=None, help="partitioning workers (env KGCN_THREADS)")
    common.add_argument("--manifest", type=Path, default=None, help="where to write the run manifest")

    parser = argparse.ArgumentParser(prog="kgcn", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"kgcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    p = add("gen-grid", cmd_gen_grid, "write a grid graph (optionally with the directional task)")
    p.add_argument("--height", type=_positive, required=True)
    p.add_argument("--width", type=_positive, required=True)
    p.add_argument("--connectivity", choices=CONNECTIVITIES, default="moore")
    p.add_argument("--task", choices=["none", "directional"], default="none")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("gen-community", cmd_gen_community, "write a seeded planted-partition dataset")
    p.add_argument("--nodes", type=_positive, default=200)
    p.add_argument("--classes", type=_positive, default=2)
    p.add_argument("--features", type=_positive, default=8)
    p.add_argument("--out", type=Path, required=True)

    p = add("partition", cmd_partition, "compute and cache per-node partitions")
    p.add_argument("--graph", type=Path, required=True, help="edges.tsv")
    p.add_argument("--num-nodes", type=_positive, default=None)
    p.add_argument("--labeling", choices=LABELING_NAMES, required=True)
    p.add_argument("--c", type=_positive, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("train", cmd_train, "train from a run config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="overrides the config's output directory")

    p = add("eval", cmd_eval, "accuracy of a checkpoint on one mask")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="directory with edges/features/labels/masks.tsv")
    p.add_argument("--mask", choices=["train", "val", "test"], default="test")
    p.add_argument("--partitions", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the model gradients")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--step", type=_positive_float, default=1e-4)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)

    p = add("verify-grid", cmd_verify_grid, "k-GCN vs 2-D convolution on a Moore grid")
    p.add_argument("--height", type=_positive, default=6)
    p.add_argument("--width", type=_positive, default=6)
    p.add_argument("--m", type=_positive, default=2)
    p.add_argument("--k", type=_positive, default=4)
    p.add_argument("--channels", type=_positive, default=3)
    p.add_argument("--seeds", type=_parse_seeds, default=list(range(10)), help="e.g. 0-9 or 1,4,7")
    p.add_argument("--out", type=Path, default=None)

    p = add("expressivity", cmd_expressivity, "directional task: c=1 model vs canonical 9-GCN")
    p.add_argument("--height", type=_positive, default=8)
    p.add_argument("--width", type=_positive, default=8)
    p.add_argument("--epochs", type=_positive, default=500)
    p.add_argument("--learning-rate", type=_positive_float, default=0.05)
    p.add_argument("--out", type=Path, default=None)

    p = add("rerun", cmd_rerun, "replay the command recorded in a manifest")
    p.add_argument("manifest_file", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "expressivity" and args.seed is None:
        args.seed = 0
    if args.command == "gen-grid":
        if args.seed is None:
            args.seed = 0
        if args.task == "directional" and (args.height < 4 or args.width < 4 or args.connectivity != "moore"):
            parser.error("--task directional needs a moore grid of at least 4x4")
    if args.command == "gen-community" and args.seed is None:
        args.seed = 0
    if args.command == "verify-grid" and args.seed is not None:
        args.seeds = [args.seed]
    args.threads = resolve_threads(args.threads)

    run = Run(args.command, argv, args)
    try:
        code = args.func(run, args)
    except VerificationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("failed")
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("diverged")
        return 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("input-error")
        return 2
    run.finish("ok" if code == 0 else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
