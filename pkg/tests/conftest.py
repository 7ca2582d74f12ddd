"""Shared fixtures: canonical datasets and session-scoped trained toy models."""

from __future__ import annotations

import numpy as np
import pytest

import latentflow as lf


TOY_LATENT_CFG = dict(iterations=5000, batch_size=4, lr=1e-3, p_zero=0.1,
                      sigma=0.1, seed=0, log_every=1)


@pytest.fixture(scope="session")
def toy_ds() -> lf.PairedDataset:
    return lf.toy_crossing()


@pytest.fixture(scope="session")
def toy_latent(toy_ds):
    """Latent flow model trained to convergence on the crossing toy task."""
    spec = lf.ModelSpec(d_x=2, d_y=2, task=toy_ds.task, enc_hidden=32,
                        enc_depth=2, dyn_hidden=64, dyn_depth=3)
    model = lf.build_model(spec, seed=0)
    log = lf.train(model, toy_ds, lf.TrainConfig(**TOY_LATENT_CFG))
    return model, log


@pytest.fixture(scope="session")
def toy_direct(toy_ds):
    """Data-space velocity regression trained on the crossing toy task."""
    model = lf.build_direct_fm(2, 2, toy_ds.task, hidden=64, depth=3, seed=0)
    cfg = lf.TrainConfig(iterations=5000, batch_size=4, lr=1e-3, p_zero=0.1,
                         seed=0, log_every=1)
    log = lf.direct_fm_train(model, toy_ds, cfg)
    return model, log


def make_small_model(seed: int = 3, schedule: str = "linear") -> lf.LatentFlowModel:
    """Tiny model for gradient checks: few parameters, full coverage."""
    spec = lf.ModelSpec(d_x=2, d_y=2, task=lf.TaskKind.regression(),
                        schedule=schedule, enc_hidden=8, enc_depth=2,
                        dyn_hidden=8, dyn_depth=2)
    return lf.build_model(spec, seed=seed)
