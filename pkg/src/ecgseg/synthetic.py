"""Deterministic synthetic ECG records with wave annotations.

Self-contained stand-in for real data: 10 s, 500 Hz, 12 leads by default,
with P/QRS/T annotations shaped like LUDB's (the first and last annotated
waves are QRS; edge cycles lack P and T). Useful for the overfit drill,
demos, and tests.
"""

from __future__ import annotations

import numpy as np

from .signal import EcgRecord
from .wfdb import WaveAnnotation

STANDARD_LEADS = ["i", "ii", "iii", "avr", "avl", "avf",
                  "v1", "v2", "v3", "v4", "v5", "v6"]


def _bump(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def make_ecg_record(record_id: str = "synth-1", seed: int = 0, fs: float = 500.0,
                    duration: float = 10.0, n_leads: int = 12, noise: float = 0.008
                    ) -> tuple[EcgRecord, dict[str, list[WaveAnnotation]]]:
    """Synthesize an annotated multi-lead record.

    Annotations are identical across leads; signals differ by per-lead
    scaling, baseline drift phase, and independent noise.
    """
    rng = np.random.default_rng(seed)
    n = int(round(fs * duration))
    t = (2.0 * np.arange(n) + 1.0) / (2.0 * fs)

    centers = []
    c = 0.4 + rng.uniform(0.0, 0.1)
    while c + 0.5 < duration:
        centers.append(c)
        c += rng.uniform(0.72, 0.88)

    clean = np.zeros(n)
    beats = []
    for c in centers:
        p_c, t_c = c - 0.17, c + 0.30
        clean += 0.15 * _bump(t, p_c, 0.02)
        clean += (
            -0.15 * _bump(t, c - 0.03, 0.008)
            + 1.0 * _bump(t, c, 0.012)
            - 0.25 * _bump(t, c + 0.03, 0.008)
        )
        clean += 0.3 * _bump(t, t_c, 0.05)

        def span(center, half):
            lo = int(round((center - half) * fs))
            hi = int(round((center + half) * fs))
            return max(lo, 0), min(hi, n - 1)

        beats.append(
            {
                "P": (*span(p_c, 0.055), int(round(p_c * fs))),
                "QRS": (*span(c, 0.055), int(round(c * fs))),
                "T": (*span(t_c, 0.13), int(round(t_c * fs))),
            }
        )

    waves = []
    for k, beat in enumerate(beats):
        if k > 0:
            on, off, pk = beat["P"]
            waves.append(WaveAnnotation("P", on, pk, off))
        on, off, pk = beat["QRS"]
        waves.append(WaveAnnotation("QRS", on, pk, off))
        if k < len(beats) - 1:
            on, off, pk = beat["T"]
            waves.append(WaveAnnotation("T", on, pk, off))
    waves.sort(key=lambda w: w.onset)

    leads = STANDARD_LEADS[:n_leads]
    signals = np.empty((n_leads, n))
    waves_by_lead = {}
    for j, name in enumerate(leads):
        scale = 0.6 + 0.05 * j
        drift = 0.04 * np.sin(2 * np.pi * 0.25 * t + j)
        signals[j] = scale * clean + drift + rng.normal(0.0, noise, size=n)
        waves_by_lead[name] = [
            WaveAnnotation(w.wave_type, w.onset, w.peak, w.offset, lead=j) for w in waves
        ]
    record = EcgRecord(record_id=record_id, leads=leads, signals=signals, sampling_rate=fs)
    return record, waves_by_lead
