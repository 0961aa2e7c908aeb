"""Shared trained-model fixtures, session-scoped so the expensive training
runs once and is reused by pipeline, CLI, and acceptance tests."""

import os

import pytest

from bfiki.inference import new_ki_model, numeric_layout, save_ki_checkpoint, train_adversarial
from bfiki.sra import TcnAeConfig, save_sra_checkpoint, train_sra
from bfiki.synth import SynthConfig, labeled_segments, synth_dataset, synth_sine_dataset

E2E_SYNTH = SynthConfig(cps_range=(0.8, 1.2), noise_sigma=0.01)
E2E_SEED = 21


@pytest.fixture(scope="session")
def sra_model_full():
    """The recovery model used by acceptance criterion 5 and the e2e attack."""
    train = synth_sine_dataset(64, 240, seed=11)
    return train_sra(train, TcnAeConfig(seed=1))


@pytest.fixture(scope="session")
def ki_model_e2e():
    """Keystroke classifier trained on ground-truth segments of generated
    six-digit passwords; drives the end-to-end attack criterion."""
    data = synth_dataset({6: 400}, E2E_SYNTH, seed=E2E_SEED)
    segments = []
    for lab in data:
        segments.extend(labeled_segments(lab))
    model = new_ki_model(numeric_layout(), seed=0, lambda_=0.5)
    train_adversarial(segments, model, epochs=14, lr=1e-3, batch=16, seed=0)
    return model


@pytest.fixture(scope="session")
def e2e_checkpoints(tmp_path_factory, sra_model_full, ki_model_e2e):
    base = tmp_path_factory.mktemp("ckpt")
    sra_path = os.path.join(base, "sra.ckpt")
    ki_path = os.path.join(base, "ki.ckpt")
    save_sra_checkpoint(sra_path, sra_model_full)
    save_ki_checkpoint(ki_path, ki_model_e2e)
    return {"sra": sra_path, "ki": ki_path}
