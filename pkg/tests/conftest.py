"""Shared fixtures: desk-scale experiment runs reused across test modules."""

import dataclasses

import numpy as np
import pytest

from subtrain import runner
from subtrain.config import DatasetConfig, ExperimentConfig, OptimizerConfig, Seeds
from subtrain.model import ModelSpec
from subtrain.trajectory import SamplingSchedule

DESK_SEEDS = (11, 12, 13)


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles between the column spans of two orthonormal matrices.

    Sine-based formula; arccos of overlap singular values cannot resolve
    angles below ~1e-8 in float64.
    """
    resid = b - a @ (a.T @ b)
    sv = np.linalg.svd(resid, compute_uv=False)
    return np.arcsin(np.clip(sv, -1.0, 1.0))


def fd_grad(loss_fn, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences, coordinate by coordinate."""
    g = np.zeros_like(w)
    for i in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wm[i] -= h
        g[i] = (loss_fn(wp) - loss_fn(wm)) / (2.0 * h)
    return g


def desk_config(seed: int, noise: float | None = None) -> ExperimentConfig:
    """The pinned desk-scale recipe behind the heavy acceptance criteria."""
    return ExperimentConfig(
        model=ModelSpec((784, 64, 10)),
        dataset=DatasetConfig(kind="digits", train_size=10000, test_size=2000,
                              normalize=True),
        seeds=Seeds(init=seed, data=1000 + seed, noise=2000 + seed),
        baseline=OptimizerConfig(kind="sgd", lr=0.1, momentum=0.9, weight_decay=1e-4,
                                 epochs=20, batch_size=128),
        sampling=SamplingSchedule(samples_per_epoch=1, start_epoch=0, end_epoch=20),
        include_w0=True,
        subspace_d=20,
        projected=OptimizerConfig(kind="psgd", lr=0.2, momentum=0.9, weight_decay=1e-4,
                                  epochs=10, batch_size=128, schedule=[(5, 0.1)]),
        noise_fraction=noise,
    )


def tiny_blobs_config(**overrides) -> ExperimentConfig:
    """Small synthetic recipe for fast runner-level tests."""
    cfg = ExperimentConfig(
        model=ModelSpec((16, 16, 3)),
        dataset=DatasetConfig(kind="blobs", classes=3, per_class=40, test_per_class=20,
                              dim=16, spread=0.3),
        seeds=Seeds(1, 2, 3),
        baseline=OptimizerConfig(kind="sgd", lr=0.1, momentum=0.9, weight_decay=1e-4,
                                 epochs=8, batch_size=16),
        sampling=SamplingSchedule(1, 0, 8),
        include_w0=False,
        subspace_d=6,
        projected=OptimizerConfig(kind="psgd", lr=0.5, momentum=0.9, weight_decay=1e-4,
                                  epochs=5, batch_size=16),
    )
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@pytest.fixture(scope="session")
def clean_desk_runs(tmp_path_factory):
    """Baseline + extraction + P-SGD + P-BFGS per desk seed (criteria 7-9)."""
    runs = []
    for seed in DESK_SEEDS:
        out = tmp_path_factory.mktemp(f"desk_{seed}")
        cfg = desk_config(seed)
        base = runner.cmd_train(cfg, out)
        extract = runner.cmd_extract(cfg, out)
        psgd = runner.cmd_ptrain(cfg, out)
        pb_cfg = dataclasses.replace(
            cfg, projected=OptimizerConfig(kind="pbfgs", epochs=10, batch_size=512))
        pbfgs = runner.cmd_ptrain(pb_cfg, out)
        runs.append({
            "seed": seed,
            "out": out,
            "base_rows": base["rows"],
            "base_final": base["rows"][-1].test_acc,
            "basis": extract["basis"],
            "ratios": extract["ratios"],
            "w0": psgd["w0"],
            "psgd_final": psgd["rows"][-1].test_acc,
            "psgd_w": psgd["w_final"],
            "pbfgs_accs": [r.test_acc for r in pbfgs["rows"]],
            "pbfgs_w": pbfgs["w_final"],
        })
    return runs


@pytest.fixture(scope="session")
def noise_desk_runs(tmp_path_factory):
    """Label-noise comparison runs at c = 0.8 (criterion 10)."""
    runs = []
    for seed in DESK_SEEDS:
        out = tmp_path_factory.mktemp(f"noise_{seed}")
        result = runner.cmd_noise(desk_config(seed, noise=0.8), out)
        runs.append(result)
    return runs
