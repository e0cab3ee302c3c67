import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
CSV_FLOAT_FORMAT = "%.12g"
MANIFEST_NAME = "MANIFEST.txt"
# still open while the manifest is written; listed without checksum
VOLATILE_NAMES = ("run.log",)
RESOLVED_CONFIG_NAME = "config.resolved.json"

EXIT_OK = 0
EXIT_BAD_CONFIG = 1
EXIT_INVALID_PARAMS = 2
EXIT_VERIFY_FAIL = 3
EXIT_ABORTED = 4


class LabError(Exception):
    pass


class ConfigError(LabError):
    pass


def ensure_dir(path):
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def write_json(path, payload):
    with open(path, "w", encoding="utf8") as fw:
        fw.write(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True, default=_to_builtin))
        fw.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf8") as fr:
        return json.load(fr)


def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"object of type {type(value).__name__} is not JSON serializable")


def write_csv(path, columns: dict):
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path):
    return pd.read_csv(path)


def sha256_file(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as fr:
        while True:
            chunk = fr.read(chunk_size)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir):
    """
    list every file under out_dir except the manifest itself with its checksum;
    volatile files get the tag "volatile" in place of checksum and size
    """
    lines = []
    for root, _, files in os.walk(out_dir):
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, out_dir)
            if rel == MANIFEST_NAME:
                continue
            if name in VOLATILE_NAMES:
                lines.append(f"volatile  -  {rel}")
                continue
            lines.append(f"{sha256_file(full)}  {os.path.getsize(full)}  {rel}")
    lines.sort(key=lambda line: line.split("  ", 2)[2])
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf8") as fw:
        fw.writelines([f"{line}\n" for line in lines])
    return lines


def loglog_fit(xs, ys, confidence=0.95):
    """
    least-squares fit of log(ys) against log(xs); returns slope, intercept and a
    two-sided confidence interval for the slope
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    mask = (xs > 0) & (ys > 0) & np.isfinite(ys)
    xs, ys = xs[mask], ys[mask]
    if xs.size < 3:
        return None
    fit = stats.linregress(np.log(xs), np.log(ys))
    half = stats.t.ppf(0.5 + confidence / 2, xs.size - 2) * fit.stderr
    return {
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "slope_ci": [float(fit.slope - half), float(fit.slope + half)],
        "r_value": float(fit.rvalue),
        "n_points": int(xs.size),
    }


def geometric_grid(lo, hi, per_decade):
    n = max(int(np.ceil(np.log10(hi / lo) * per_decade)), 1) + 1
    return np.geomspace(lo, hi, n)
