"""Deterministic SVG figures of result tables."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SVG_SALT = "iml"


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def guess_columns(rows: list[dict]) -> tuple[str, str, str | None]:
    """Pick (x, y, err) columns: the first numeric column that varies, then 'value'-like."""
    cols = list(rows[0].keys()) if rows else []
    numeric = [c for c in cols if c != "config_hash" and all(_num(r[c]) is not None for r in rows)]
    y = next((c for c in ("value", "rate", "mean", "empirical", "energy") if c in numeric), None)
    if y is None:
        y = numeric[-1] if numeric else cols[-1]
    varying = [c for c in numeric if c != y and len({r[c] for r in rows}) > 1]
    x = varying[0] if varying else None
    err = next((c for c in ("stderr", "error_estimate", "se") if c in numeric), None)
    return x, y, err


def plot_rows(rows: list[dict], out_path, x: str | None = None, y: str | None = None,
              err: str | None = None, title: str = "", group: str | None = None) -> Path:
    """Value against sweep variable with error bars, one series per ``group`` value."""
    gx, gy, ge = guess_columns(rows)
    x = x or gx
    y = y or gy
    err = err if err is not None else ge
    plt.rcParams["svg.hashsalt"] = SVG_SALT
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    series: dict = {}
    for i, r in enumerate(rows):
        key = r.get(group, "") if group else ""
        series.setdefault(key, []).append(r)
    for key, rs in sorted(series.items()):
        xs = [_num(r[x]) if x else float(i) for i, r in enumerate(rs)]
        ys = [_num(r[y]) for r in rs]
        es = [_num(r[err]) or 0.0 for r in rs] if err else None
        keep = [i for i, (a, b) in enumerate(zip(xs, ys)) if a is not None and b is not None
                and abs(b) != float("inf")]
        xs = [xs[i] for i in keep]
        ys = [ys[i] for i in keep]
        es = [es[i] for i in keep] if es else None
        ax.errorbar(xs, ys, yerr=es, marker="o", ms=3, capsize=2, lw=1, label=str(key) or None)
    ax.set_xlabel(x or "row")
    ax.set_ylabel(y)
    if title:
        ax.set_title(title, fontsize=9)
    if len(series) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg", metadata={"Date": None, "Title": title or None})
    plt.close(fig)
    return out_path


def plot_csv(csv_path, out_path=None, **kw) -> Path:
    csv_path = Path(csv_path)
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    out = Path(out_path) if out_path else csv_path.with_suffix(".svg")
    kw.setdefault("title", csv_path.stem)
    return plot_rows(rows, out, **kw)
