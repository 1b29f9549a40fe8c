"""Synthetic (dry, RIR, wet) items and the dataset manifest."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decay import edc_time, rt60_from_edc
from .room import RoomSpec, SamplingRegime, align_direct_path, convolve, sample_room_group, synth_rir_ism
from .stft import Waveform
from .wavio import read_wav, write_wav

__all__ = [
    "EXCITATIONS",
    "MANIFEST_FIELDS",
    "excitation",
    "Item",
    "make_item",
    "synthesize_dataset",
    "read_manifest",
    "validate_row",
    "load_item_audio",
]

EXCITATIONS = ("white", "pink", "chirps")

MANIFEST_FIELDS = [
    "item_id", "seed", "regime", "room_x", "room_y", "room_z", "rt60_target", "rt60_measured",
    "src_x", "src_y", "src_z", "mic_x", "mic_y", "mic_z", "excitation",
    "dry_path", "rir_path", "wet_path",
]


def excitation(kind: str, n_samples: int, seed: int, sample_rate: int = 16000) -> Waveform:
    """Built-in dry sources: white noise, pink noise, or a sum of log chirps.

    Every source is scaled to a peak of 0.5.
    """
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.standard_normal(n_samples)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n_samples))
        f = np.arange(spec.size, dtype=float)
        f[0] = 1.0
        x = np.fft.irfft(spec / np.sqrt(f), n_samples)
    elif kind == "chirps":
        t = np.arange(n_samples) / sample_rate
        dur = n_samples / sample_rate
        x = np.zeros(n_samples)
        nyq = sample_rate / 2
        for _ in range(4):
            f0 = rng.uniform(20.0, 200.0)
            f1 = rng.uniform(0.5 * nyq, 0.95 * nyq)
            k = np.log(f1 / f0) / dur
            phase = 2 * np.pi * f0 * (np.exp(k * t) - 1) / k + rng.uniform(0, 2 * np.pi)
            x += np.sin(phase)
        # a little noise keeps every STFT band excited
        x += 0.05 * rng.standard_normal(n_samples)
    else:
        raise ValueError(f"unknown excitation {kind!r}; choose from {EXCITATIONS}")
    return Waveform(0.5 * x / np.max(np.abs(x)), sample_rate)


@dataclass
class Item:
    item_id: str
    seed: int
    spec: RoomSpec
    dry: Waveform
    rir: Waveform
    wet: Waveform
    rt60_measured: float


def _item_seeds(base_seed: int, index: int, mics_per_room: int) -> tuple[int, int]:
    room_seed = int(np.random.SeedSequence([base_seed, index // mics_per_room, 0]).generate_state(1)[0])
    item_seed = int(np.random.SeedSequence([base_seed, index, 1]).generate_state(1)[0])
    return room_seed, item_seed


def make_item(index: int, regime: SamplingRegime, base_seed: int = 0, dry_samples: int = 49151,
              kind: str = "white", sample_rate: int = 16000, dry: Waveform | None = None) -> Item:
    """Item ``index``: microphone ``index % mics_per_room`` of room ``index // mics_per_room``.

    The RIR is direct-path aligned before convolution, so the wet signal is
    time-aligned with the dry one.
    """
    room_seed, item_seed = _item_seeds(base_seed, index, regime.mics_per_room)
    specs = sample_room_group(regime, room_seed, sample_rate=sample_rate)
    spec = specs[index % regime.mics_per_room]
    rir = align_direct_path(synth_rir_ism(spec))
    if dry is None:
        dry = excitation(kind, dry_samples, item_seed, sample_rate)
    wet = convolve(dry, rir)
    try:
        rt60 = rt60_from_edc(edc_time(rir))
    except ValueError:
        rt60 = float("nan")
    return Item(f"item{index:05d}", item_seed, spec, dry, rir, wet, rt60)


def _row(item: Item, regime: SamplingRegime, kind: str) -> dict:
    s = item.spec
    return {
        "item_id": item.item_id,
        "seed": item.seed,
        "regime": regime.name,
        "room_x": repr(s.dims[0]), "room_y": repr(s.dims[1]), "room_z": repr(s.dims[2]),
        "rt60_target": repr(s.rt60_target),
        "rt60_measured": repr(float(item.rt60_measured)),
        "src_x": repr(s.source_pos[0]), "src_y": repr(s.source_pos[1]), "src_z": repr(s.source_pos[2]),
        "mic_x": repr(s.mic_pos[0]), "mic_y": repr(s.mic_pos[1]), "mic_z": repr(s.mic_pos[2]),
        "excitation": kind,
        "dry_path": f"dry/{item.item_id}.wav",
        "rir_path": f"rir/{item.item_id}.wav",
        "wet_path": f"wet/{item.item_id}.wav",
    }


def _synth_one(args) -> dict:
    index, regime, base_seed, dry_samples, kind, sample_rate, out_dir, dry_file = args
    dry = read_wav(dry_file, sample_rate) if dry_file else None
    item = make_item(index, regime, base_seed, dry_samples, kind, sample_rate, dry)
    out = Path(out_dir)
    row = _row(item, regime, "file" if dry_file else kind)
    write_wav(out / row["dry_path"], item.dry)
    write_wav(out / row["rir_path"], item.rir)
    write_wav(out / row["wet_path"], item.wet)
    return row


def synthesize_dataset(out_dir: str | os.PathLike, count: int, regime: SamplingRegime,
                       base_seed: int = 0, dry_samples: int = 49151, kind: str = "white",
                       sample_rate: int = 16000, jobs: int = 1,
                       dry_files: list[str] | None = None) -> Path:
    """Write ``count`` items plus ``manifest.csv`` under ``out_dir``; returns the manifest path.

    With ``dry_files`` the dry sources are taken from those WAVs in turn.
    """
    out = Path(out_dir)
    for sub in ("dry", "rir", "wet"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    tasks = [
        (i, regime, base_seed, dry_samples, kind, sample_rate, str(out),
         dry_files[i % len(dry_files)] if dry_files else None)
        for i in range(count)
    ]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_synth_one, tasks))
    else:
        rows = [_synth_one(t) for t in tasks]
    rows.sort(key=lambda r: r["item_id"])
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return manifest


def read_manifest(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        return list(reader)


def validate_row(row: dict, regimes: dict[str, SamplingRegime]) -> RoomSpec:
    """Rebuild the row's room and check it against its regime; raises ValueError."""
    regime = regimes[row["regime"]]
    spec = RoomSpec(
        tuple(float(row[k]) for k in ("room_x", "room_y", "room_z")),
        float(row["rt60_target"]),
        tuple(float(row[k]) for k in ("src_x", "src_y", "src_z")),
        tuple(float(row[k]) for k in ("mic_x", "mic_y", "mic_z")),
    )
    spec.check(regime, margin=regime.wall_margin)
    return spec


def load_item_audio(row: dict, root: str | os.PathLike) -> tuple[Waveform, Waveform, Waveform]:
    """``(dry, rir, wet)`` waveforms of a manifest row, paths relative to ``root``."""
    root = Path(root)
    return tuple(read_wav(root / row[k]) for k in ("dry_path", "rir_path", "wet_path"))
