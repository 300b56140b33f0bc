"""Dataset persistence: one file per day, text (JSON lines) or columnar binary.

Text form: the first line is the day header, every further line one auction
``{"i": index, "u": estimate, "r": realized, "m": market price}``.  Floats
are written with ``repr`` precision, so text and binary forms load to
identical days.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .market import EnvironmentDay, PricingKind, PricingRule

FORMATS = ("jsonl", "npz")
HEADER_KEYS = ("day_id", "budget", "roi_target", "H", "split", "mechanism", "pricing", "k_schedule",
               "slot_boundaries", "n_auctions")


class DatasetError(ValueError):
    pass


def day_filename(day_id, fmt):
    return f"day_{int(day_id):04d}.{fmt}"


def _check_header(header, path):
    if not isinstance(header, dict):
        raise DatasetError(f"{path}: header is not a record")
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise DatasetError(f"{path}: header lacks {', '.join(missing)}")


def _day_from(header, u, r, m, path):
    _check_header(header, path)
    kind = PricingKind(header["pricing"])
    rule = PricingRule(kind, header["k_schedule"] if kind is PricingKind.MIXED else None)
    try:
        day = EnvironmentDay(u, r, m, rule, header["budget"], header["roi_target"], header["slot_boundaries"],
                             header["day_id"], header["split"], header["mechanism"])
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if day.n_auctions != header["n_auctions"] or day.H != header["H"]:
        raise DatasetError(f"{path}: header counts do not match the auction records")
    return day


def save_day(day, path):
    path = Path(path)
    fmt = path.suffix.lstrip(".")
    if fmt == "jsonl":
        lines = [json.dumps(day.header(), sort_keys=True)]
        for i, (u, r, m) in enumerate(zip(day.utility_estimate, day.realized_utility, day.market_price)):
            lines.append(json.dumps({"i": i, "u": float(u), "r": float(r), "m": float(m)}))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "npz":
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(day.header(), sort_keys=True)),
                     u=day.utility_estimate, r=day.realized_utility, m=day.market_price)
    else:
        raise DatasetError(f"{path}: unknown format {fmt!r}")
    return path


def load_day(path):
    path = Path(path)
    fmt = path.suffix.lstrip(".")
    if fmt == "jsonl":
        with open(path) as fh:
            first = fh.readline()
            try:
                header = json.loads(first)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: corrupt header ({exc.msg})") from None
            _check_header(header, path)
            n = header["n_auctions"]
            cols = np.empty((n, 3))
            count = 0
            for line in fh:
                if not line.strip():
                    continue
                if count >= n:
                    raise DatasetError(f"{path}: more auction records than the header announces")
                rec = json.loads(line)
                if rec["i"] != count:
                    raise DatasetError(f"{path}: auction records out of order at line {count + 2}")
                cols[count] = rec["u"], rec["r"], rec["m"]
                count += 1
        if count != n:
            raise DatasetError(f"{path}: expected {n} auction records, found {count}")
        return _day_from(header, cols[:, 0], cols[:, 1], cols[:, 2], path)
    if fmt == "npz":
        try:
            with np.load(path, allow_pickle=False) as z:
                header = json.loads(str(z["header"]))
                return _day_from(header, z["u"], z["r"], z["m"], path)
        except (OSError, KeyError, json.JSONDecodeError, ValueError) as exc:
            if isinstance(exc, DatasetError):
                raise
            raise DatasetError(f"{path}: unreadable day file ({exc})") from None
    raise DatasetError(f"{path}: unknown format {fmt!r}")


def save_dataset(days, directory, fmt="jsonl"):
    if fmt not in FORMATS:
        raise DatasetError(f"unknown format {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [save_day(d, directory / day_filename(d.day_id, fmt)) for d in days]


def dataset_files(directory):
    directory = Path(directory)
    files = sorted(p for p in directory.glob("day_*") if p.suffix.lstrip(".") in FORMATS)
    return files


def load_dataset(directory):
    files = dataset_files(directory)
    if not files:
        raise DatasetError(f"{directory}: no day files")
    days = [load_day(p) for p in files]
    return sorted(days, key=lambda d: d.day_id)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
