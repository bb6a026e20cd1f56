"""Run-directory layout: manifest, CSV tables, report JSON, SVG plots and summary.

Every file except ``timing.log`` is a pure function of the check results, and
the plots and summary are rebuilt from the files already on disk, so a second
run or a ``report`` pass reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import re
from pathlib import Path

import numpy as np
import pydantic
import scipy

from . import __version__
from .checks import CHECK_IDS, CSV_COLUMNS, CheckResult
from .config import ExperimentConfig
from .svg import Series, line_plot

EXPECTED_FILES = ("config.json", "manifest.json", "verify_<grid-hash>.csv or series_<run-id>.csv")
VERIFY_HEADER = ("grid_hash",) + CSV_COLUMNS


class ArtifactError(RuntimeError):
    """Missing or unreadable run-directory content."""


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def versions() -> dict:
    return {
        "morawetz_lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
        "python": platform.python_version(),
    }


def guard_report(cfg: ExperimentConfig, results: list[CheckResult]) -> dict:
    """Per geometry: the guard time and the latest sampled time of any series."""
    if cfg.suite not in ("run-decay", "run-local"):
        return {}
    out = {}
    for g in cfg.geometries:
        latest = 0.0
        for res in results:
            for rid, cols in res.series.items():
                if rid.startswith(g.label + "_") and len(cols["t"]):
                    latest = max(latest, float(np.max(cols["t"])))
        T_max = cfg.guard_time(g)
        out[g.label] = {"T_max": T_max, "t_end": cfg.end_time(g), "latest_sample": latest, "respected": latest <= T_max}
    return out


def manifest(cfg: ExperimentConfig, results: list[CheckResult]) -> dict:
    by_id = {r.check_id: r for r in results}
    checks = []
    for cid in CHECK_IDS:
        r = by_id.get(cid)
        if r is None:
            checks.append({"id": cid, "status": "not_run", "measured": {}, "thresholds": {}})
        else:
            checks.append({"id": cid, "status": "pass" if r.passed else "fail", "measured": r.measured,
                           "thresholds": r.thresholds})
    grid_hashes = sorted({row["grid_hash"] for r in results for row in r.rows if row["grid_hash"]})
    return {
        "suite": cfg.suite,
        "config_hash": cfg.hash_hex,
        "grid_hashes": grid_hashes,
        "versions": versions(),
        "guard": guard_report(cfg, results),
        "checks": checks,
    }


def write_run(out: Path, cfg: ExperimentConfig, results: list[CheckResult], wall_seconds: float) -> None:
    """All outputs of one suite run; plots and summary are rendered from the written files."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    dump_json(out / "manifest.json", manifest(cfg, results))
    groups: dict[str, list] = {}
    for r in results:
        for row in r.rows:
            groups.setdefault(row["grid_hash"], []).append(row)
    for h, rows in sorted(groups.items()):
        _write_csv(out / f"verify_{h}.csv", VERIFY_HEADER, ([row[c] for c in VERIFY_HEADER] for row in rows))
    for r in results:
        for rid, cols in sorted(r.series.items()):
            names = list(cols)
            _write_csv(out / f"series_{rid}.csv", names, zip(*(np.asarray(cols[n]).tolist() for n in names)))
        for rid, rep in sorted(r.reports.items()):
            dump_json(out / f"report_{rid}.json", rep)
    lines = [f"{r.check_id} {r.seconds:.2f} s" for r in results] + [f"total {wall_seconds:.2f} s"]
    (out / "timing.log").write_text("\n".join(lines) + "\n")
    render(out)


# -- reading back ----------------------------------------------------------------------


def _read_csv(path: Path, required=None) -> list[dict]:
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
            header = rows[0].keys() if rows else []
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise ArtifactError(f"cannot read {path.name}: {exc}") from None
    if required is not None and rows and list(header) != list(required):
        raise ArtifactError(f"{path.name}: unexpected header {list(header)}")
    for r in rows:
        if None in r or any(v is None for v in r.values()):
            raise ArtifactError(f"{path.name}: ragged row {r}")
    return rows


def _num(s: str) -> float | None:
    if s == "":
        return None
    try:
        return float(s)
    except ValueError:
        raise ArtifactError(f"non-numeric value {s!r}") from None


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read {path.name}: {exc}") from None


def load_run(run_dir: Path) -> dict:
    run_dir = Path(run_dir)
    missing = [f for f in ("config.json", "manifest.json") if not (run_dir / f).is_file()]
    verify = sorted(run_dir.glob("verify_*.csv"))
    series = sorted(run_dir.glob("series_*.csv"))
    if missing or not (verify or series):
        raise ArtifactError(f"{run_dir} is not a completed run; expected files: {', '.join(EXPECTED_FILES)}")
    rows = []
    for p in verify:
        rows.extend(_read_csv(p, VERIFY_HEADER))
    ser = {}
    for p in series:
        table = _read_csv(p)
        cols = {k: [] for k in (table[0].keys() if table else [])}
        for r in table:
            for k, v in r.items():
                cols[k].append(_num(v))
        ser[p.stem[len("series_"):]] = cols
    reports = {p.stem[len("report_"):]: _read_json(p) for p in sorted(run_dir.glob("report_*.json"))}
    return {
        "config": _read_json(run_dir / "config.json"),
        "manifest": _read_json(run_dir / "manifest.json"),
        "rows": rows,
        "series": ser,
        "reports": reports,
    }


# -- plots -----------------------------------------------------------------------------

_BRACKET = re.compile(r"\[(\w+)=([-+0-9.eE]+)\]")


def _bracket_value(check_id: str) -> float | None:
    m = _BRACKET.search(check_id)
    return float(m.group(2)) if m else None


def _row_series(rows, prefix: str, x_of, label_of) -> list[Series]:
    groups: dict[str, list] = {}
    for r in rows:
        if not r["check_id"].startswith(prefix) or r["check_id"].endswith("/fit") or r["norm"] == "":
            continue
        x = x_of(r)
        if x is None:
            continue
        groups.setdefault(label_of(r), []).append((x, abs(_num(r["norm"]))))
    out = []
    for label, pts in groups.items():
        pts.sort()
        out.append(Series(label, tuple(p[0] for p in pts), tuple(p[1] for p in pts)))
    return out


def _case_label(r) -> str:
    parts = [r["check_id"].split("/", 1)[1], r["grid_hash"][:6]]
    for k in ("s", "rho"):
        if r[k] != "":
            parts.append(f"{k}={float(r[k]):g}")
    if r["z_re"] != "":
        parts.append(f"z={float(r['z_re']):g}{float(r['z_im']):+g}i")
    if r["l"] != "":
        parts.append(f"l={r['l']}")
    return " ".join(parts)


def _verify_plots(run: dict) -> list[tuple[str, str, list[Series], str, str, bool, bool]]:
    rows = run["rows"]
    suite = run["manifest"]["suite"]
    by_l = lambda r: _num(r["l"])  # noqa: E731
    by_H = lambda r: _num(r["H"])  # noqa: E731
    geo = lambda r: f"{r['check_id'].split('/', 1)[1]} {r['grid_hash'][:6]}"  # noqa: E731
    plots = []
    if suite == "verify-operators":
        plots.append(("A1_self_adjoint.svg", "self-adjointness defect per mode", _row_series(rows, "A1/self_adjoint", by_l, geo), "l", "defect", False, True))
        plots.append(("A1_skew.svg", "multiplier skew defect per mode", _row_series(rows, "A1/skew", by_l, geo), "l", "defect", False, True))
        plots.append(("A2_commutator.svg", "finest-level change of commutator residual", _row_series(rows, "A2/", by_l, lambda r: r["check_id"].split("/")[1]), "l", "max |R_h - R_h/2|", False, True))
        plots.append(("A3_leapfrog.svg", "leapfrog error against spectral propagation", _row_series(rows, "A3/leapfrog_error", lambda r: _bracket_value(r["check_id"]), lambda r: "leapfrog"), "dt", "sup error", True, True))
    elif suite == "verify-speccalc":
        plots.append(("A4_hardy_family.svg", "Hardy ratio of the optimizing family", _row_series(rows, "A4/hardy_family", lambda r: _bracket_value(r["check_id"]), lambda r: r["grid_hash"][:6]), "L", "ratio", False, False))
        for fam in ("conj_cutoff", "resolvent_weight", "conj_resolvent"):
            plots.append((f"A5_{fam}.svg", f"{fam} norms against H", _row_series(rows, f"A5/{fam}", by_H, _case_label), "H", "norm", True, True))
        plots.append(("A5_localized_cutoff.svg", "time-localized norms against t", _row_series(rows, "A5/localized_cutoff", by_H, _case_label), "t", "norm", True, True))
    return plots


def _functional_plots(run: dict) -> list[tuple]:
    cfg, ser, reps = run["config"], run["series"], run["reports"]
    selected = cfg.get("functionals", [])
    plots = []
    if cfg["suite"] == "run-decay":
        H_acc = cfg["decay"]["acceptance_H"]
        ids = [rid for rid, rep in sorted(reps.items()) if rep["H"] == H_acc and rid in ser]
        if "thm1" in selected:
            ss = [Series(f"{rid} {n}", tuple(ser[rid]["t"]), tuple(ser[rid][n])) for rid in ids for n in ("T1_a", "T1_b", "T1_c", "T1_d")]
            plots.append(("thm1.svg", "frequency-localized decay accumulators", ss, "T", "accumulated value", False, True))
        if "thm1prime" in selected:
            ss = []
            for rid in ids:
                cols = [c for c in ser[rid] if c.startswith("S_")]
                sup = tuple(max(ser[rid][c][i] for c in cols) for i in range(len(ser[rid]["t"]))) if cols else ()
                ss.append(Series(f"{rid} sup_k S_k", tuple(ser[rid]["t"]), sup))
            plots.append(("thm1prime.svg", "largest shell accumulator", ss, "T", "sup over shells", False, True))
    elif cfg["suite"] == "run-local":
        if "thm2" in selected:
            ss = [Series(f"{rid} {c}", tuple(cols["t"]), tuple(cols[c])) for rid, cols in sorted(ser.items()) for c in cols if c.startswith("C_grad")]
            plots.append(("thm2.svg", "cone accumulators", ss, "T", "C_grad", False, True))
        if "compact" in selected:
            ss = []
            for rid, rep in sorted(reps.items()):
                cs = rep["slopes"].get("compact_set", {})
                ss.append(Series(rid, tuple(2.0 ** j for j in cs.get("j", [])), tuple(cs.get("blocks", []))))
            plots.append(("compact.svg", "compact-set dyadic blocks", ss, "2^j", "block integral", True, True))
    return plots


def summary_text(run: dict) -> str:
    man = run["manifest"]
    lines = [f"suite {man['suite']}", f"config hash {man['config_hash']}"]
    for c in man["checks"]:
        lines.append(f"{c['id']}: {c['status']}")
    for label, g in sorted(man.get("guard", {}).items()):
        lines.append(f"guard {label}: latest sample {g['latest_sample']:g} <= T_max {g['T_max']:g}: {g['respected']}")
    return "\n".join(lines) + "\n"


def render(run_dir: Path) -> list[Path]:
    """Rebuild every SVG and summary.txt from the run directory's files."""
    run = load_run(run_dir)
    written = []
    for name, title, series, xl, yl, lx, ly in _verify_plots(run) + _functional_plots(run):
        written.append(line_plot(Path(run_dir) / name, title, series, xl, yl, logx=lx, logy=ly))
    (Path(run_dir) / "summary.txt").write_text(summary_text(run))
    return written


def compared_files(run_dir: Path) -> list[str]:
    return sorted(p.name for p in Path(run_dir).iterdir() if p.suffix in (".csv", ".json", ".svg"))


def compare_runs(a: Path, b: Path) -> dict:
    """Byte comparison of CSV/JSON/SVG files; the manifest's A8 entry is excluded on both sides."""
    fa, fb = compared_files(a), compared_files(b)
    differing = []
    for name in sorted(set(fa) | set(fb)):
        pa, pb = Path(a) / name, Path(b) / name
        if not (pa.is_file() and pb.is_file()):
            differing.append(name)
            continue
        if name == "manifest.json":
            ja, jb = _read_json(pa), _read_json(pb)
            for j in (ja, jb):
                j["checks"] = [c for c in j["checks"] if c["id"] != "A8_determinism"]
            same = ja == jb
        else:
            same = pa.read_bytes() == pb.read_bytes()
        if not same:
            differing.append(name)
    return {"files": len(set(fa) | set(fb)), "differing": differing, "identical": not differing}


def record_determinism(run_dir: Path, result: dict) -> None:
    path = Path(run_dir) / "manifest.json"
    man = _read_json(path)
    for c in man["checks"]:
        if c["id"] == "A8_determinism":
            c.update(status="pass" if result["identical"] else "fail", measured=result,
                     thresholds={"differing_files": 0})
    dump_json(path, man)
