"""Seeded random streams, one per consumer, so runs replay bit for bit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Streams:
    init: np.random.Generator
    shuffle: np.random.Generator
    dropout: np.random.Generator
    adversarial: np.random.Generator


def make_streams(seed: int) -> Streams:
    init, shuffle, drop, adv = np.random.SeedSequence(seed).spawn(4)
    return Streams(
        init=np.random.default_rng(init),
        shuffle=np.random.default_rng(shuffle),
        dropout=np.random.default_rng(drop),
        adversarial=np.random.default_rng(adv),
    )
