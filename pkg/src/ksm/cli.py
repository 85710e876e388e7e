"""Command line driver.

    ksm train   --config halfmoons.json
    ksm compare --config halfmoons.json
    ksm analyze --config halfmoons.json --tasks spectrum,cluster
    ksm prepare-mnist --out data/

Outputs go to ``<out>/<config-hash>/`` where ``<out>`` is ``--out``, else
``$KSM_OUT``, else ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import analysis, baselines
from .config import RunConfig, load_config
from .data import export_bundled_mnist
from .errors import KSMError
from .model import load_checkpoint, response_closed_form, save_checkpoint
from .training import train

log = logging.getLogger("ksm")


# ---------------------------------------------------------------------------
# output helpers


def _run_dir(cfg: RunConfig, out_root):
    root = out_root or os.environ.get("KSM_OUT") or "out"
    path = os.path.join(root, cfg.hash)
    os.makedirs(os.path.join(path, "reports"), exist_ok=True)
    return path


def _stamp(cfg):
    return f"config_hash={cfg.hash} seed={cfg.seed}"


def _write_csv(path, cfg, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path, cfg, doc):
    doc = {"config_hash": cfg.hash, "seed": cfg.seed, **doc}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _kernel_label(kernel):
    params = [f"{k}={v}" for k, v in kernel.to_config().items() if k != "kind"]
    return ":".join([kernel.kind, *params])


def _train(cfg: RunConfig, dataset, n, seed, on_phase_end=None):
    tc = cfg.train_config(seed=seed)
    return train(dataset, cfg.kernel, n, tc, fix_q=cfg.homogeneous, on_phase_end=on_phase_end)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig, out_root=None, timing=True):
    run = _run_dir(cfg, out_root)
    dataset, _ = cfg.datasets()
    extra = {"config_hash": cfg.hash, "seed": cfg.seed}

    def phase_checkpoint(i, state):
        save_checkpoint(state, os.path.join(run, f"checkpoint_phase{i + 1}.json"), extra)

    log.info("training N=%d on %s (T=%d, M=%d)", cfg.n_neurons, dataset.name, dataset.T, dataset.M)
    state, tlog = _train(cfg, dataset, cfg.n_neurons, cfg.seed, phase_checkpoint)
    save_checkpoint(state, os.path.join(run, "checkpoint.json"), extra)
    tlog.to_csv(os.path.join(run, "trainlog.csv"), header_comment=_stamp(cfg), include_timing=timing)
    F = cfg.kernel.gram(dataset.X)
    err = analysis.nrmse(F, response_closed_form(state, dataset.X).Y)
    log.info("final nrmse %.6f", err)
    return run


def _features(method, cfg, dataset, F, dim, seed, trained):
    k, X = cfg.kernel, dataset.X
    if method == "kernel_pca":
        return baselines.kernel_pca_features(F, dim)
    if method == "nystrom_uniform":
        return baselines.nystrom_features(k, X, baselines.select_landmarks_uniform(X, dim, seed))
    if method == "nystrom_kmeans":
        return baselines.nystrom_features(k, X, baselines.select_landmarks_kmeans(X, dim, seed))
    if method == "rff":
        return baselines.random_fourier_features(k.sigma, X, dim, seed)
    key = (dim, seed)
    if key not in trained:
        trained[key], _ = _train(cfg, dataset, dim, seed)
    state = trained[key]
    if method == "hebbian":
        return response_closed_form(state, X).Y
    if method == "nystrom_learned":
        return baselines.nystrom_features(k, X, baselines.LandmarkSet.from_state(state))
    raise ValueError(method)


def cmd_compare(cfg: RunConfig, out_root=None):
    run = _run_dir(cfg, out_root)
    dataset, _ = cfg.datasets()
    dims, methods, seeds = cfg.compare
    F = cfg.kernel.gram(dataset.X)
    trained = {}
    reports = []
    for dim in dims:
        for seed in seeds:
            for method in methods:
                Y = _features(method, cfg, dataset, F, dim, seed, trained)
                r = analysis.ApproxReport(method, dim, analysis.nrmse(F, Y), seed, dataset.name, cfg.kernel.to_config())
                log.info("%-16s dim=%-4d seed=%-3d nrmse=%.5f", method, dim, seed, r.nrmse)
                reports.append(r)
    rows = [(r.method, r.dim, r.nrmse, r.seed, r.dataset, _kernel_label(cfg.kernel)) for r in reports]
    _write_csv(os.path.join(run, "reports", "compare.csv"), cfg, ["method", "dim", "nrmse", "seed", "dataset", "kernel"], rows)
    _write_json(os.path.join(run, "reports", "compare.json"), cfg, {"reports": [r.as_dict() for r in reports]})
    return run


def cmd_analyze(cfg: RunConfig, checkpoint=None, tasks=None, out_root=None):
    run = _run_dir(cfg, out_root)
    opts = cfg.analyze
    tasks = tasks or opts.get("tasks") or ["spectrum"]
    unknown = sorted(set(tasks) - set(_TASKS))
    if unknown:
        raise KSMError(f"unknown task(s) {unknown}; expected a subset of {sorted(_TASKS)}")
    dataset, holdout = cfg.datasets()
    state = None
    if set(tasks) - {"spectrum"} or checkpoint:
        state = load_checkpoint(checkpoint or os.path.join(run, "checkpoint.json"))
        if state.M != dataset.M:
            raise KSMError(f"checkpoint expects M={state.M} inputs but the dataset has M={dataset.M}")
    Y = None
    if state is not None:
        Y = response_closed_form(state, dataset.X).Y
        if state.kernel.odd:
            state, Y = analysis.fix_sign_degeneracy(state, Y)
    ctx = dict(cfg=cfg, run=run, opts=opts, dataset=dataset, holdout=holdout, state=state, Y=Y)
    for task in tasks:
        _TASKS[task](**ctx)
    return run


def _task_spectrum(cfg, run, dataset, Y, **_):
    spec_in = analysis.spectrum(cfg.kernel.gram(dataset.X))
    _write_csv(os.path.join(run, "reports", "spectrum_input.csv"), cfg, ["index", "value"], enumerate(spec_in))
    if Y is not None:
        spec_out = analysis.output_spectrum(Y)
        _write_csv(os.path.join(run, "reports", "spectrum_output.csv"), cfg, ["index", "value"], enumerate(spec_out))


def _task_histogram(cfg, run, opts, Y, **_):
    h = analysis.response_histogram(Y, opts.get("bins", 50))
    rows = zip(h.edges[:-1], h.edges[1:], h.counts)
    _write_csv(os.path.join(run, "reports", "histogram.csv"), cfg, ["bin_left", "bin_right", "count"], rows)
    _write_json(os.path.join(run, "reports", "histogram.json"), cfg, {"excess_kurtosis": h.excess_kurtosis, "bins": len(h.counts)})


def _task_rfields(cfg, run, dataset, Y, **_):
    S = analysis.linearized_responses(dataset.X, Y)
    header = ["neuron"] + [f"s{j}" for j in range(S.shape[1])]
    _write_csv(os.path.join(run, "reports", "rfields.csv"), cfg, header, ([i, *row] for i, row in enumerate(S)))


def _task_cluster(cfg, run, opts, dataset, Y, **_):
    if dataset.labels is None:
        raise KSMError("clustering needs a labeled dataset")
    k = opts.get("k", int(np.unique(dataset.labels).size))
    n_init = opts.get("n_init", 100)
    on_y = analysis.kmeans_cluster_eval(Y, dataset.labels, k, n_init, cfg.seed)
    on_x = analysis.kmeans_cluster_eval(dataset.X, dataset.labels, k, n_init, cfg.seed)
    _write_json(
        os.path.join(run, "reports", "cluster.json"),
        cfg,
        {"k": k, "n_init": n_init, "accuracy_y": on_y.accuracy, "accuracy_x": on_x.accuracy,
         "inertia_y": on_y.inertia, "inertia_x": on_x.inertia},
    )


def _task_classify(cfg, run, opts, dataset, holdout, state, **_):
    if holdout is None or holdout.labels is None or dataset.labels is None:
        raise KSMError("classification needs labeled train and holdout sets")
    Ytr = response_closed_form(state, dataset.X).Y
    Yte = response_closed_form(state, holdout.X).Y
    decays = opts.get("weight_decays", [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    seeds = opts.get("classifier_seeds", [0, 1, 2, 3, 4])
    counts = np.bincount(dataset.labels)
    rows = []
    for kpc in opts.get("labels_per_class", [1, 3, 10, 30, 100]):
        if kpc > counts[counts > 0].min():
            log.warning("skipping %d labels per class: not enough labeled samples", kpc)
            continue
        for source, (A, B) in (("x", (dataset.X, holdout.X)), ("y", (Ytr, Yte))):
            r = analysis.linear_classifier_eval(A, dataset.labels, B, holdout.labels, kpc, decays, seeds)
            rows.append((kpc, source, r.train_accuracy, r.test_accuracy))
    _write_csv(os.path.join(run, "reports", "classify.csv"), cfg, ["labels_per_class", "features", "train_accuracy", "test_accuracy"], rows)


def _task_pca(cfg, run, dataset, Y, **_):
    px = analysis.top_components(dataset.X, 2)
    py = analysis.top_components(Y, 2)
    labels = dataset.labels if dataset.labels is not None else [""] * dataset.T
    rows = ((t, labels[t], *px[t], *py[t]) for t in range(dataset.T))
    _write_csv(os.path.join(run, "reports", "pca.csv"), cfg, ["t", "label", "x_pc1", "x_pc2", "y_pc1", "y_pc2"], rows)


_TASKS = {
    "spectrum": _task_spectrum,
    "histogram": _task_histogram,
    "rfields": _task_rfields,
    "cluster": _task_cluster,
    "classify": _task_classify,
    "pca": _task_pca,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="ksm", description="Kernel similarity matching experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output root (default $KSM_OUT or ./out)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")

    tr = sub.add_parser("train", help="train a network and write checkpoint + log")
    common(tr)
    tr.add_argument("--no-timing", action="store_true",
                    help="leave the wall_ms log column empty so reruns are byte-identical")
    common(sub.add_parser("compare", help="approximation error sweep over methods and dims"))
    an = sub.add_parser("analyze", help="spectra, histograms, receptive fields, clustering, classification")
    common(an)
    an.add_argument("--checkpoint", default=None, help="checkpoint (default: the run's checkpoint.json)")
    an.add_argument("--tasks", default=None, help=f"comma-separated subset of {','.join(_TASKS)}")
    pm = sub.add_parser("prepare-mnist", help="write the bundled 5000-digit MNIST subset as IDX files")
    pm.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "prepare-mnist":
            for path in export_bundled_mnist(args.out):
                print(path)
            return 0
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise KSMError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, seed=args.seed)
        limiter = nullcontext()
        if args.threads:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=args.threads)
        with limiter:
            if args.command == "train":
                run = cmd_train(cfg, args.out, timing=not args.no_timing)
            elif args.command == "compare":
                run = cmd_compare(cfg, args.out)
            else:
                tasks = args.tasks.split(",") if args.tasks else None
                run = cmd_analyze(cfg, args.checkpoint, tasks, args.out)
        print(run)
        return 0
    except (KSMError, FileNotFoundError, RuntimeError) as exc:
        print(f"ksm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
