"""Small scenarios shared by the test modules."""

import csv
from pathlib import Path
from typing import List

import numpy as np

from modules.beamformer import Architecture, HybridBeamformer, group_length
from modules.channel_model import ChannelSet
from modules.scenario import ScenarioConfig


def tiny_config(**changes) -> ScenarioConfig:
    """N=8, A=4, Q=2, K=2, M=2 with short iteration caps; valid for both architectures."""
    base = dict(
        num_antennas=8,
        num_rf_chains=4,
        num_ttds=2,
        num_users=2,
        num_subcarriers=2,
        num_scatters=1,
        search_points=64,
        outer_max=6,
        bcd_max_iter=4,
        mm_max_iter=8,
        analog_inner_max=30,
        analog_outer_max=20,
        realizations=2,
        seed=3,
    )
    base.update(changes)
    return ScenarioConfig(**base)


def randn_c(rng: np.random.Generator, *shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng: np.random.Generator, M: int, N: int, K: int, freqs=None) -> ChannelSet:
    if freqs is None:
        freqs = 30e9 + 1e9 * np.arange(M)
    return ChannelSet(randn_c(rng, M, N, K), freqs)


def random_beam(architecture: Architecture, N=8, A=2, Q=2, M=3, K=1, seed=0) -> HybridBeamformer:
    rng = np.random.default_rng(seed)
    L = group_length(architecture, N, A, Q)
    freqs = 30e9 + 1e9 * np.arange(M)
    t_max = 1e-10
    return HybridBeamformer(architecture, N, rng.uniform(0, 2 * np.pi, (A, Q, L)),
                            rng.uniform(0, t_max, (A, Q)), randn_c(rng, M, A, K + 1), freqs, t_max)


def read_csv(path: str | Path) -> List[dict]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
