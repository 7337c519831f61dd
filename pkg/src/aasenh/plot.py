"""Binary PGM rendering of feature matrices and CSV export of training curves."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def to_image(frames: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """T x F features to an F x T uint8 image, low frequencies on the bottom row."""
    f = np.asarray(frames, dtype=np.float64).T[::-1]
    lo = float(f.min()) if lo is None else lo
    hi = float(f.max()) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.clip(np.round((f - lo) * scale), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("write_pgm: expected a 2-D image")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(x) for x in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def triptych(noisy: np.ndarray, enhanced: np.ndarray, clean: np.ndarray, gap: int = 2) -> np.ndarray:
    """Noisy, enhanced and clean panels stacked top to bottom on one shared intensity scale."""
    mats = [noisy, enhanced, clean]
    lo = min(float(m.min()) for m in mats)
    hi = max(float(m.max()) for m in mats)
    panels = [to_image(m, lo, hi) for m in mats]
    sep = np.full((gap, panels[0].shape[1]), 255, dtype=np.uint8)
    return np.concatenate([panels[0], sep, panels[1], sep, panels[2]])


def export_curves(run_dir, out_csv) -> list[Path]:
    """Copy a run's epoch log (and step log when present) into curve CSVs next to ``out_csv``."""
    run_dir, out_csv = Path(run_dir), Path(out_csv)
    src = run_dir / "epochs.csv"
    if not src.exists():
        raise FileNotFoundError(f"{src} not found")
    written = []
    for name, dst in (("epochs.csv", out_csv), ("steps.csv", out_csv.with_name(out_csv.stem + "-steps.csv"))):
        path = run_dir / name
        if not path.exists() or not path.read_text():
            continue
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        with open(dst, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        written.append(dst)
    return written
