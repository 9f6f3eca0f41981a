"""Experiment orchestration: baseline runs, basis extraction, projected runs.

Every command is a deterministic function of (config, seeds); outputs land
in one run directory and are written atomically. Artifacts:

    w0.npy                  initial parameters
    trajectory.dltr         sampled snapshots (DLTR format)
    wfinal_baseline.npy     parameters after the baseline phase
    metrics_baseline.csv    per-epoch baseline metrics
    basis.dlbs              extracted subspace basis (DLBS format)
    spectrum.csv            variance ratios of every trajectory component
    wfinal_projected.npy    parameters after the projected phase
    metrics_projected.csv   per-epoch projected metrics
    noise.dlnz              persisted label corruption (noise runs)
    noise_summary.csv       P-SGD final vs SGD final vs SGD best
    run.json                seeds, parameter count, w0 checksum, assumptions
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import subspace as subspace_mod
from .config import ExperimentConfig
from .errors import (ConfigError, FormatError, LineSearchFailed, NumericalFailure,
                     ShapeError)
from .optim import (AdamState, LineSearchConfig, PBfgsState, SgdState, adam_step,
                    effective_lr, pbfgs_step, psgd_step, sgd_step)
from .trajectory import TrajectoryStore, due, load_all

METRICS_HEADER = ("phase,epoch,train_loss,train_acc,test_loss,test_acc,"
                  "wall_ms,alpha,backtracks,skipped_updates")


@dataclass
class MetricsRow:
    phase: str
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    wall_ms: float
    alpha: float | None = None
    backtracks: int | None = None
    skipped_updates: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.train_acc <= 1.0 or not 0.0 <= self.test_acc <= 1.0:
            raise ValueError("accuracies must lie in [0, 1]")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_metrics(rows: list[MetricsRow], path) -> None:
    """CSV with the fixed header; UTF-8, LF endings, written atomically."""
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in (
            r.phase, r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc,
            r.wall_ms, r.alpha, r.backtracks, r.skipped_updates)))
    _write_atomic(path, "\n".join(lines) + "\n")


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(text.encode("utf-8"))
    os.replace(tmp, path)


def _save_array_atomic(path, arr: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        np.save(f, arr)
    os.replace(tmp, path)


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_datasets(cfg: ExperimentConfig, out_dir) -> tuple[data_mod.Dataset, data_mod.Dataset]:
    """Train/test pair for the configured source, normalized if requested."""
    ds = cfg.dataset
    if ds.kind == "blobs":
        full = data_mod.synthetic_blobs(ds.classes, ds.per_class + ds.test_per_class,
                                        ds.dim, ds.spread, cfg.seeds.data)
        train_idx, test_idx = [], []
        block = ds.per_class + ds.test_per_class
        for c in range(ds.classes):
            train_idx.extend(range(c * block, c * block + ds.per_class))
            test_idx.extend(range(c * block + ds.per_class, (c + 1) * block))
        train = data_mod.Dataset(full.inputs[train_idx], full.labels[train_idx], ds.classes)
        test = data_mod.Dataset(full.inputs[test_idx], full.labels[test_idx], ds.classes)
    elif ds.kind == "digits":
        cache = Path(out_dir) / "digits_cache"
        train, test = data_mod.digits_dataset(ds.train_size, ds.test_size,
                                              cfg.seeds.data, cache_dir=cache)
    elif ds.kind == "idx":
        train = data_mod.load_idx(ds.train_images, ds.train_labels)
        test = data_mod.load_idx(ds.test_images, ds.test_labels)
        if ds.limit:
            train = data_mod.Dataset(train.inputs[:ds.limit], train.labels[:ds.limit],
                                     train.num_classes)
        if ds.test_limit:
            test = data_mod.Dataset(test.inputs[:ds.test_limit], test.labels[:ds.test_limit],
                                    test.num_classes)
    else:
        raise ConfigError(f"dataset.kind: unknown kind {ds.kind!r}")

    if cfg.model.num_classes != train.num_classes:
        raise ConfigError(
            f"model.layer_dims: final width {cfg.model.num_classes} != "
            f"{train.num_classes} dataset classes")
    if ds.normalize:
        stats = data_mod.feature_stats(train)
        train = data_mod.normalize(train, stats)
        test = data_mod.normalize(test, stats)
    return train, test


def _model_inputs(cfg: ExperimentConfig, inputs: np.ndarray) -> np.ndarray:
    """Reshape flat features to (N, 1, side, side) when a conv stem is used."""
    if cfg.model.conv_stem is None:
        return inputs
    n, feats = inputs.shape
    side = int(round(np.sqrt(feats)))
    if side * side != feats:
        raise ShapeError(f"conv stem needs square single-channel inputs, got {feats} features")
    return inputs.reshape(n, 1, side, side)


def evaluate(cfg: ExperimentConfig, w: np.ndarray, ds: data_mod.Dataset) -> tuple[float, float]:
    """(mean loss, accuracy) over a full dataset."""
    logits = model_mod.forward(cfg.model, w, _model_inputs(cfg, ds.inputs))
    loss = model_mod.cross_entropy(logits, ds.labels)
    acc = float(np.mean(logits.argmax(axis=1) == ds.labels))
    return loss, acc


def train_baseline(cfg: ExperimentConfig, train: data_mod.Dataset, test: data_mod.Dataset,
                   w0: np.ndarray, store: TrajectoryStore | None = None):
    """Full-space training with snapshot sampling.

    Returns (final w, metrics rows, best test accuracy seen at any epoch end).
    """
    opt = cfg.baseline
    spec = cfg.model
    w = w0.copy()
    if opt.kind == "sgd":
        state = SgdState(velocity=np.zeros_like(w), lr=opt.lr,
                         momentum=opt.momentum, weight_decay=opt.weight_decay)
    elif opt.kind == "adam":
        state = AdamState(m=np.zeros_like(w), v=np.zeros_like(w), lr=opt.lr,
                          weight_decay=opt.weight_decay)
    else:
        raise ConfigError(f"baseline.optimizer: unknown kind {opt.kind!r}")

    if store is not None and cfg.include_w0:
        store.record(0, 0, w)

    steps_per_epoch = data_mod.num_batches(len(train), opt.batch_size)
    rows: list[MetricsRow] = []
    best_acc = 0.0
    gstep = 0
    for epoch in range(opt.epochs):
        t0 = time.perf_counter()
        state.lr = effective_lr(opt.lr, opt.schedule, epoch)
        for step, (xb, yb) in enumerate(data_mod.batches(train, opt.batch_size,
                                                         cfg.seeds.data, epoch)):
            _, g = model_mod.backward(spec, w, _model_inputs(cfg, xb), yb)
            w = sgd_step(w, g, state) if opt.kind == "sgd" else adam_step(w, g, state)
            gstep += 1
            if store is not None and due(cfg.sampling, epoch, step, steps_per_epoch):
                store.record(epoch, gstep, w)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        train_loss, train_acc = evaluate(cfg, w, train)
        test_loss, test_acc = evaluate(cfg, w, test)
        best_acc = max(best_acc, test_acc)
        rows.append(MetricsRow("baseline", epoch, train_loss, train_acc,
                               test_loss, test_acc, wall_ms))
    return w, rows, best_acc


def train_projected(cfg: ExperimentConfig, train: data_mod.Dataset, test: data_mod.Dataset,
                    w0: np.ndarray, basis: subspace_mod.SubspaceBasis, step_hook=None):
    """Subspace training (P-SGD or P-BFGS) from the stored initialization.

    ``step_hook``, if given, receives one dict per P-BFGS step with enough
    recorded state (parameters, batch, B, projected gradient, alpha) to
    re-certify the accepted step lengths externally.
    """
    opt = cfg.projected
    spec = cfg.model
    w = w0.copy()
    if opt.kind == "psgd":
        state = SgdState(velocity=np.zeros(basis.effective_d), lr=opt.lr,
                         momentum=opt.momentum, weight_decay=opt.weight_decay)
    elif opt.kind == "pbfgs":
        state = PBfgsState.fresh(basis.effective_d)
        ls_cfg = LineSearchConfig(opt.line_search_c, opt.line_search_beta, opt.max_backtracks)
    else:
        raise ConfigError(f"projected.optimizer: unknown kind {opt.kind!r}")

    rows: list[MetricsRow] = []
    gstep = 0
    for epoch in range(opt.epochs):
        t0 = time.perf_counter()
        alphas: list[float] = []
        backtracks = 0
        skipped = 0
        if opt.kind == "psgd":
            state.lr = effective_lr(opt.lr, opt.schedule, epoch)
        for xb, yb in data_mod.batches(train, opt.batch_size, cfg.seeds.data, epoch):
            xb = _model_inputs(cfg, xb)
            if opt.kind == "psgd":
                _, g = model_mod.backward(spec, w, xb, yb)
                w = psgd_step(w, g, basis, state)
            else:
                def loss_fn(wv, xb=xb, yb=yb):
                    return model_mod.loss(spec, wv, xb, yb)

                def grad_fn(wv, xb=xb, yb=yb):
                    return model_mod.backward(spec, wv, xb, yb)

                w_prev = w
                w, info = pbfgs_step(w, loss_fn, grad_fn, basis, state, ls_cfg)
                if info["line_search_failed"]:
                    if gstep == 0:
                        raise LineSearchFailed("line search failed on the very first step")
                else:
                    alphas.append(info["alpha"])
                    backtracks += info["evals"] - 1
                if info["skipped_update"]:
                    skipped += 1
                if step_hook is not None:
                    step_hook({"epoch": epoch, "step": gstep, "w_before": w_prev.copy(),
                               "batch": (xb, yb), "B": state.B.copy(),
                               "g_proj": info["g_proj"], "alpha": info["alpha"],
                               "accepted": not info["line_search_failed"]})
            gstep += 1
        wall_ms = (time.perf_counter() - t0) * 1000.0
        train_loss, train_acc = evaluate(cfg, w, train)
        test_loss, test_acc = evaluate(cfg, w, test)
        if opt.kind == "pbfgs":
            mean_alpha = float(np.mean(alphas)) if alphas else 0.0
            rows.append(MetricsRow("projected", epoch, train_loss, train_acc, test_loss,
                                   test_acc, wall_ms, mean_alpha, backtracks, skipped))
        else:
            rows.append(MetricsRow("projected", epoch, train_loss, train_acc,
                                   test_loss, test_acc, wall_ms))
    return w, rows


def check_confinement(basis: subspace_mod.SubspaceBasis, w0: np.ndarray,
                      w_final: np.ndarray, tol: float = 1e-6) -> float:
    """Relative leakage of (w_final - w0) outside span(P); raises above tol."""
    delta = w_final - w0
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        return 0.0
    resid = delta - basis.P @ (basis.P.T @ delta)
    leakage = float(np.linalg.norm(resid)) / norm
    if leakage > tol:
        raise NumericalFailure(f"update left the subspace: leakage {leakage:.3e} > {tol:.0e}")
    return leakage


def _apply_noise(cfg: ExperimentConfig, train: data_mod.Dataset, out: Path):
    """Corrupt labels once per run directory; later phases reuse the record."""
    noise_path = out / "noise.dlnz"
    if noise_path.exists():
        record = data_mod.load_noise_record(noise_path)
        return data_mod.apply_noise_record(train, record), record
    corrupted, record = data_mod.corrupt_labels(train, cfg.noise_fraction, cfg.seeds.noise)
    data_mod.save_noise_record(noise_path, record)
    return corrupted, record


def _write_run_meta(cfg: ExperimentConfig, out: Path, n: int, steps_per_epoch: int) -> None:
    meta = {
        "n": n,
        "steps_per_epoch": steps_per_epoch,
        "seeds": {"init": cfg.seeds.init, "data": cfg.seeds.data, "noise": cfg.seeds.noise},
        "w0_sha256": _sha256_file(out / "w0.npy"),
        "noise_fraction": cfg.noise_fraction,
        "assumptions": {"test_set_clean_under_label_noise": True},
    }
    _write_atomic(out / "run.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_train(cfg: ExperimentConfig, out_dir=None):
    """Baseline phase: train from a fresh seed, sampling the trajectory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_datasets(cfg, out)
    if cfg.noise_fraction is not None:
        train, _ = _apply_noise(cfg, train, out)

    in_channels = 1
    w0 = model_mod.init_params(cfg.model, cfg.seeds.init, in_channels)
    _save_array_atomic(out / "w0.npy", w0)
    steps_per_epoch = data_mod.num_batches(len(train), cfg.baseline.batch_size)
    _write_run_meta(cfg, out, w0.shape[0], steps_per_epoch)

    with TrajectoryStore.create(out / "trajectory.dltr") as store:
        w, rows, best_acc = train_baseline(cfg, train, test, w0, store)
    _save_array_atomic(out / "wfinal_baseline.npy", w)
    emit_metrics(rows, out / "metrics_baseline.csv")
    return {"w_final": w, "rows": rows, "best_acc": best_acc, "out": out}


def cmd_extract(cfg: ExperimentConfig, out_dir=None, d: int | None = None,
                trajectory_path=None):
    """Extract the subspace basis and write the full variance spectrum."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = Path(trajectory_path) if trajectory_path is not None else out / "trajectory.dltr"
    samples, _ = load_all(traj)
    basis = subspace_mod.extract_basis(samples, d if d is not None else cfg.subspace_d)
    subspace_mod.save_basis(out / "basis.dlbs", basis)

    sigmas = subspace_mod.trajectory_spectrum(samples)
    ratios = subspace_mod.explained_variance(sigmas)
    lines = ["component,sigma,variance_ratio"]
    lines += [f"{i},{_fmt(float(s))},{_fmt(float(r))}" for i, (s, r) in
              enumerate(zip(sigmas, ratios))]
    _write_atomic(out / "spectrum.csv", "\n".join(lines) + "\n")
    return {"basis": basis, "sigmas": sigmas, "ratios": ratios, "out": out}


def cmd_ptrain(cfg: ExperimentConfig, out_dir=None, basis_path=None, init_path=None,
               step_hook=None):
    """Projected phase: retrain from the persisted initialization inside span(P)."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    basis = subspace_mod.load_basis(basis_path if basis_path is not None else out / "basis.dlbs")
    init = Path(init_path) if init_path is not None else out / "w0.npy"
    w0 = np.load(init)

    meta_path = out / "run.json"
    if meta_path.exists() and init == out / "w0.npy":
        recorded = json.loads(meta_path.read_text()).get("w0_sha256")
        if recorded is not None and recorded != _sha256_file(init):
            raise FormatError(f"{init}: checksum differs from the one recorded at train time")

    n = model_mod.param_count(cfg.model)
    if basis.n != n:
        raise ShapeError(f"basis has n={basis.n} but the model has {n} parameters")
    if w0.shape != (n,):
        raise ShapeError(f"initial parameters have shape {w0.shape}, model needs ({n},)")

    train, test = build_datasets(cfg, out)
    if cfg.noise_fraction is not None:
        train, _ = _apply_noise(cfg, train, out)

    w, rows = train_projected(cfg, train, test, w0, basis, step_hook)
    leakage = check_confinement(basis, w0, w)
    _save_array_atomic(out / "wfinal_projected.npy", w)
    emit_metrics(rows, out / "metrics_projected.csv")
    return {"w_final": w, "rows": rows, "leakage": leakage, "basis": basis,
            "w0": w0, "out": out}


def cmd_noise(cfg: ExperimentConfig, out_dir=None):
    """Label-noise comparison: corrupted SGD vs corrupted P-SGD, clean test set."""
    if cfg.noise_fraction is None:
        raise ConfigError("noise.fraction: required for the noise command")
    if cfg.projected.kind != "psgd":
        raise ConfigError("projected.optimizer: the noise comparison is defined for psgd")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    baseline = cmd_train(cfg, out)
    extract = cmd_extract(cfg, out)
    projected = cmd_ptrain(cfg, out)

    sgd_final = baseline["rows"][-1].test_acc
    sgd_best = baseline["best_acc"]
    psgd_final = projected["rows"][-1].test_acc
    _write_atomic(out / "noise_summary.csv",
                  "p_sgd_final,sgd_final,sgd_best\n"
                  f"{_fmt(psgd_final)},{_fmt(sgd_final)},{_fmt(sgd_best)}\n")
    return {"p_sgd_final": psgd_final, "sgd_final": sgd_final, "sgd_best": sgd_best,
            "out": out, "extract": extract}


def cmd_spectrum(cfg: ExperimentConfig, out_dir=None, trajectory_path=None):
    """Report the variance spectrum of a recorded trajectory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    traj = Path(trajectory_path) if trajectory_path is not None else out / "trajectory.dltr"
    samples, _ = load_all(traj)
    sigmas = subspace_mod.trajectory_spectrum(samples)
    ratios = subspace_mod.explained_variance(sigmas)
    return {"sigmas": sigmas, "ratios": ratios}
