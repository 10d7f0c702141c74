"""Event files and result tables.

Event file, format ``mesobell-events/1``, JSON lines::

    {"format": "mesobell-events/1", "count": N, "seed": S, "chunk_size": C, "params": {...}}
    {"tl": 0.83, "ml": "other", "tr": 2.1, "mr": "Dstar-l-nu-cc"}
    ...

The first line is the header; every following line is one pair. Times
are written with ``repr`` so reading them back is exact. The CSV variant
is headerless ``tl,ml,tr,mr`` rows with the same header object stored as
JSON next to it in ``<file>.params.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import EventParseError, ValidationError
from .estimation import BinnedCorrelation, ChshCurve
from .eventgen import FORMAT_VERSION, EventDataset
from .physics import DecayMode, Flavor, PhysicsParams

RESULT_COLUMNS = ("delta_t", "E_hat", "sigma_E", "S_hat", "sigma_S", "n_same", "n_opp")
PREDICTION_COLUMNS = ("delta_t", "E_qm", "S_qm")


def params_to_dict(p: PhysicsParams) -> dict[str, Any]:
    return {
        "tau_b": p.tau_b,
        "delta_m": p.delta_m,
        "decay_modes": [
            {
                "label": m.label,
                "tags": m.tags_flavor.name,
                "branching_fraction": m.branching_fraction,
                "taggable": m.taggable,
            }
            for m in p.decay_modes
        ],
    }


def params_from_dict(d: dict[str, Any]) -> PhysicsParams:
    try:
        modes = tuple(
            DecayMode(
                label=m["label"],
                tags_flavor=Flavor[m["tags"]],
                branching_fraction=float(m["branching_fraction"]),
                taggable=bool(m["taggable"]),
            )
            for m in d["decay_modes"]
        )
        return PhysicsParams(tau_b=float(d["tau_b"]), delta_m=float(d["delta_m"]), decay_modes=modes)
    except (KeyError, TypeError) as exc:
        raise EventParseError(f"malformed params block: {exc!r}") from None


def _header(ds: EventDataset) -> dict[str, Any]:
    return {
        "format": FORMAT_VERSION,
        "count": ds.count,
        "seed": ds.seed,
        "chunk_size": ds.chunk_size,
        "params": params_to_dict(ds.params),
    }


def _check_header(header: Any, line: int | None) -> tuple[PhysicsParams, int]:
    if not isinstance(header, dict) or header.get("format") != FORMAT_VERSION:
        raise EventParseError(f"not a {FORMAT_VERSION} header", line)
    count = header.get("count")
    if not isinstance(count, int) or count < 0:
        raise EventParseError(f"header count must be a non-negative integer, got {count!r}", line)
    try:
        params = params_from_dict(header["params"])
    except ValidationError as exc:
        raise EventParseError(f"header params invalid: {exc}", line) from None
    except KeyError:
        raise EventParseError("header has no params block", line) from None
    return params, count


def write_events(ds: EventDataset, path: str | Path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "jsonl")
    labels = [m.label for m in ds.params.decay_modes]
    tl, tr = ds.t_l.tolist(), ds.t_r.tolist()
    ml, mr = ds.mode_l.tolist(), ds.mode_r.tolist()
    if fmt == "jsonl":
        quoted = [json.dumps(lbl) for lbl in labels]
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_header(ds), sort_keys=True) + "\n")
            fh.writelines(
                f'{{"tl": {a!r}, "ml": {quoted[b]}, "tr": {c!r}, "mr": {quoted[d]}}}\n'
                for a, b, c, d in zip(tl, ml, tr, mr)
            )
    elif fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerows((a, labels[b], c, labels[d]) for a, b, c, d in zip(tl, ml, tr, mr))
        sidecar = Path(str(path) + ".params.json")
        sidecar.write_text(json.dumps(_header(ds), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    else:
        raise ValidationError(f"unknown event format {fmt!r}")
    return path


def _parse_time(value: Any, key: str, line: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EventParseError(f"{key} must be a number, got {value!r}", line)
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise EventParseError(f"{key} must be a finite non-negative time, got {value!r}", line)
    return value


def _parse_mode(value: Any, key: str, index: dict[str, int], line: int) -> int:
    try:
        return index[value]
    except (KeyError, TypeError):
        raise EventParseError(f"{key} names unknown decay mode {value!r}", line) from None


def _dataset(header: dict, params: PhysicsParams, cols) -> EventDataset:
    tl, ml, tr, mr = cols
    return EventDataset(
        params=params,
        t_l=np.array(tl, dtype=float),
        mode_l=np.array(ml, dtype=np.int64),
        t_r=np.array(tr, dtype=float),
        mode_r=np.array(mr, dtype=np.int64),
        seed=header.get("seed"),
        chunk_size=header.get("chunk_size"),
    )


def read_events(path: str | Path) -> EventDataset:
    """Load an event file; raises EventParseError naming the bad line."""
    path = Path(path)
    if path.suffix == ".csv":
        return _read_csv(path)
    tl, ml, tr, mr = [], [], [], []
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise EventParseError("file is empty", 1)
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise EventParseError(f"header is not valid JSON ({exc.msg})", 1) from None
        params, count = _check_header(header, 1)
        index = {m.label: i for i, m in enumerate(params.decay_modes)}
        lineno = 1
        for lineno, line in enumerate(fh, 2):
            if not line.endswith("\n"):
                raise EventParseError("truncated record (no line terminator)", lineno)
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EventParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or set(rec) != {"tl", "ml", "tr", "mr"}:
                raise EventParseError("record must have exactly the keys tl, ml, tr, mr", lineno)
            tl.append(_parse_time(rec["tl"], "tl", lineno))
            ml.append(_parse_mode(rec["ml"], "ml", index, lineno))
            tr.append(_parse_time(rec["tr"], "tr", lineno))
            mr.append(_parse_mode(rec["mr"], "mr", index, lineno))
    if len(tl) != count:
        raise EventParseError(f"header count {count} but {len(tl)} records", lineno + 1)
    return _dataset(header, params, (tl, ml, tr, mr))


def _read_csv(path: Path) -> EventDataset:
    sidecar = Path(str(path) + ".params.json")
    try:
        header = json.loads(sidecar.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise EventParseError(f"missing params sidecar {sidecar}") from None
    except json.JSONDecodeError as exc:
        raise EventParseError(f"params sidecar {sidecar} is not valid JSON ({exc.msg})") from None
    params, count = _check_header(header, None)
    index = {m.label: i for i, m in enumerate(params.decay_modes)}
    tl, ml, tr, mr = [], [], [], []
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if len(row) != 4:
                raise EventParseError(f"expected 4 columns tl,ml,tr,mr, got {len(row)}", lineno)
            try:
                a, c = float(row[0]), float(row[2])
            except ValueError:
                raise EventParseError(f"non-numeric time in {row!r}", lineno) from None
            tl.append(_parse_time(a, "tl", lineno))
            ml.append(_parse_mode(row[1], "ml", index, lineno))
            tr.append(_parse_time(c, "tr", lineno))
            mr.append(_parse_mode(row[3], "mr", index, lineno))
    if len(tl) != count:
        raise EventParseError(f"params sidecar count {count} but {len(tl)} rows")
    return _dataset(header, params, (tl, ml, tr, mr))


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def count_records(path: str | Path) -> int:
    path = Path(path)
    with path.open("rb") as fh:
        n = sum(1 for _ in fh)
    return n if path.suffix == ".csv" else n - 1


def _fmt(x: float | int | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_results_csv(
    bins: Sequence[BinnedCorrelation], curve: ChshCurve, path: str | Path
) -> Path:
    """Per-bin table; S columns are filled where the bin centre is a CHSH grid point."""
    by_center = {e.delta_t: e for e in curve.estimates}
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for b in bins:
            est = by_center.get(b.center)
            w.writerow(
                [
                    _fmt(b.center),
                    _fmt(b.e_hat),
                    _fmt(b.sigma_e),
                    _fmt(est.s_hat if est else None),
                    _fmt(est.sigma_s if est else None),
                    b.n_same,
                    b.n_opp,
                ]
            )
    return path


def read_results_csv(path: str | Path) -> list[dict[str, float | None]]:
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (float(v) if v != "" else None) for k, v in row.items()})
    return rows


def write_prediction_csv(grid: np.ndarray, e_qm: np.ndarray, s_qm: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for row in zip(grid.tolist(), e_qm.tolist(), s_qm.tolist()):
            w.writerow([_fmt(x) for x in row])
    return path
