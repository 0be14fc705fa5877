"""
Reports
=======
Versioned machine-readable reports ("schema": "vim-report/1") and the coloured
terminal summary.

JSON numbers use Python's shortest round-trip repr and CSV numbers 17
significant digits, so re-parsing reproduces every float bitwise. Non-finite
numbers become null / empty cells. Reports carry no timestamps or thread
counts: the same configuration and seed give byte-identical files.
"""

import csv
import io
import json
import math
import os
import sys
from typing import NamedTuple

import numpy as np

from vimkit import __version__
from vimkit.i18n import t

SCHEMA = "vim-report/1"
FORMATS = ("json", "csv")


# ─── Colours ──────────────────────────────────────────────────────────────────

class Palette(NamedTuple):
    reset: str = ""
    bold: str = ""
    title: str = ""
    good: str = ""
    warn: str = ""
    bad: str = ""
    dim: str = ""


ANSI = Palette("\033[0m", "\033[1m", "\033[96m", "\033[92m", "\033[93m", "\033[91m", "\033[2m")
PLAIN = Palette()


def _terminal_supports_colour():
    # Windows consoles only interpret escapes under Windows Terminal.
    if "NO_COLOR" in os.environ:
        return False
    if not getattr(sys.stdout, "isatty", lambda: False)():
        return False
    return sys.platform != "win32" or "WT_SESSION" in os.environ


_palette = ANSI if _terminal_supports_colour() else PLAIN


def disable_colors():
    global _palette
    _palette = PLAIN


# ─── Report structure ─────────────────────────────────────────────────────────

def clean(value):
    """JSON-safe scalar: numpy types unwrapped, non-finite floats to None."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, dict):
        return {k: clean(v) for k, v in value.items()}
    return value


def importance_rows(table, column_names, clamp=False, with_test=True):
    """Flat report rows from [(group name, FeatureSet, VimResult)]."""
    rows = []
    for name, s, result in table:
        row = {"group": name, "columns": [column_names[j] for j in s.indices]}
        row.update(result.as_dict(clamp=clamp))
        if not with_test:
            for key in ("t_stat", "p_value", "reject"):
                row.pop(key, None)
        rows.append(row)
    return rows


def simulation_rows(table, scenario, measure, group):
    return [{"scenario": scenario, "measure": measure, "group": group, **oc.as_dict()}
            for oc in table]


def build_report(subcommand, config, rows):
    return clean({
        "schema": SCHEMA,
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "results": rows,
    })


# ─── Serialisation ────────────────────────────────────────────────────────────

def to_json(report):
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, list):
        return ";".join(str(v) for v in value)
    return str(value)


def to_csv(report):
    """Flat projection: one line per result row, columns in first-seen order."""
    header = []
    for row in report["results"]:
        header.extend(k for k in row if k not in header)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in report["results"]:
        writer.writerow([_csv_cell(row.get(k)) for k in header])
    return buf.getvalue()


def write_report(report, path, fmt="json"):
    """Write to `path` ("-" is stdout)."""
    text = to_json(report) if fmt == "json" else to_csv(report)
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


# ─── Terminal summary ─────────────────────────────────────────────────────────

def _fmt(value, digits=4):
    return "-" if value is None else f"{value:.{digits}f}"


def print_importance(report, title):
    c = _palette
    cfg = report["config"]
    print(f"\n  {c.bold}{c.title}▲ {title}{c.reset}  {c.dim}vimkit {report['version']}{c.reset}")
    print("  " + t("summary.settings", measure=cfg.get("measure"), folds=cfg.get("folds"),
                   seed=cfg.get("seed")))
    print(f"\n  {c.bold}{t('summary.group'):<16} {'psi':>9} {'se':>9} "
          f"{t('summary.interval'):>21} {'p':>8}{c.reset}")
    tested = []
    for row in report["results"]:
        interval = f"[{_fmt(row['ci_lo'])}, {_fmt(row['ci_hi'])}]"
        shade = ""
        if "reject" in row:
            tested.append(row)
            shade = c.good if row["reject"] else c.dim
        print(f"  {shade}{row['group']:<16} {_fmt(row['psi']):>9} {_fmt(row['se']):>9} "
              f"{interval:>21} {_fmt(row.get('p_value')):>8}{c.reset}")
    if tested:
        print()
    for row in tested:
        key, shade = ("verdict.reject", c.good) if row["reject"] else ("verdict.retain", c.warn)
        print(f"  {shade}{t(key, group=row['group'], beta=row['beta'])}{c.reset}")
    print()


def print_simulation(report):
    c = _palette
    rows = report["results"]
    first = rows[0] if rows else {}
    print(f"\n  {c.bold}{c.title}▲ {t('banner.simulate')}{c.reset}  "
          f"{c.dim}vimkit {report['version']}{c.reset}")
    print("  " + t("summary.scenario", scenario=first.get("scenario"),
                   measure=first.get("measure"), group=first.get("group"),
                   truth=_fmt(first.get("truth"))))
    print(f"\n  {c.bold}{'n':>6} {'mean psi':>9} {'n*MSE':>9} {t('summary.coverage'):>9} "
          f"{t('summary.rejection'):>9} {t('summary.failures'):>8}{c.reset}")
    for row in rows:
        shade = c.bad if row["n_failures"] else ""
        print(f"  {row['n']:>6} {_fmt(row['mean_psi']):>9} {_fmt(row['scaled_mse'], 3):>9} "
              f"{_fmt(row['coverage'], 3):>9} {_fmt(row['rejection_rate'], 3):>9} "
              f"{shade}{row['n_failures']:>8}{c.reset}")
    print()
