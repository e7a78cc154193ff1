"""CSV, rate and gnuplot files for experiment results."""
import math
from pathlib import Path

HEADER = "# ddmres v1"


def _num(x):
    if isinstance(x, float) and math.isnan(x):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _slug(text):
    keep = [c if c.isalnum() or c in "._-" else "_" for c in text]
    return "".join(keep).strip("_")


def table_stem(table):
    """File stem: experiment plus p, plus the table label when it carries more than p."""
    stem = f"{table.experiment}_p{table.p:g}"
    extra = [part.strip() for part in table.label.split(",") if part.strip() and not part.strip().startswith("p=")]
    if extra:
        stem += "_" + "_".join(_slug(e.replace("=", "")) for e in extra)
    return stem


def format_csv(table):
    lines = [HEADER]
    if hasattr(table, "columns"):
        lines.append(",".join(table.columns))
        lines.extend(",".join(_num(v) for v in row) for row in table.rows)
    else:
        lines.append("h,error,rate")
        lines.extend(f"{_num(h)},{_num(e)},{_num(r)}" for h, e, r in table.rows)
    return "\n".join(lines) + "\n"


def format_rates(table):
    out = [f"experiment {table.experiment}", f"label {table.label}"]
    fit = getattr(table, "fit", None)
    if fit is not None:
        out.append(f"slope {fit.slope!r}")
        out.append(f"r2 {fit.r2!r}")
        out.append(f"rows {fit.first}..{fit.last}")
    out.extend(f"note {n}" for n in table.notes)
    return "\n".join(out) + "\n"


def format_gnuplot(name, stems):
    plots = ", \\\n     ".join(f"'{s}.csv' using 1:2 with linespoints title '{s}'" for s in stems)
    return (f"# {name}: error against h\n"
            "set datafile separator ','\n"
            "set logscale xy\n"
            "set xlabel 'h'\nset ylabel 'error'\n"
            "set key left top\n"
            f"plot {plots}\n")


def write_results(name, tables, out_dir):
    """Write one CSV (plus rates file) per table and one gnuplot script; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, stems = [], []
    for i, t in enumerate(tables):
        stem = table_stem(t) if not hasattr(t, "columns") else f"{t.experiment}_{_slug(t.label) or i}"
        if stem in stems:
            stem = f"{stem}_{i}"
        stems.append(stem)
        path = out / f"{stem}.csv"
        path.write_text(format_csv(t))
        written.append(path)
        rates = out / f"{stem}.rates"
        rates.write_text(format_rates(t))
        written.append(rates)
    conv = [s for s, t in zip(stems, tables) if not hasattr(t, "columns")]
    if conv:
        gp = out / f"{name}.gp"
        gp.write_text(format_gnuplot(name, conv))
        written.append(gp)
    return written


def render(table):
    """Plain-text rendering for the terminal."""
    lines = [f"{table.experiment} [{table.label}]"]
    if hasattr(table, "columns"):
        lines.append("  " + "  ".join(f"{c:>14}" for c in table.columns))
        for row in table.rows:
            lines.append("  " + "  ".join(f"{v:>14.6g}" if isinstance(v, float) else f"{v!s:>14}" for v in row))
    else:
        lines.append(f"  {'h':>12}  {'error':>12}  {'rate':>7}")
        for h, e, r in table.rows:
            rate = "" if math.isnan(r) else f"{r:7.3f}"
            lines.append(f"  {h:12.5g}  {e:12.5g}  {rate:>7}")
        if table.fit is not None:
            lines.append(f"  fitted slope {table.fit.slope:.4f} (R^2 {table.fit.r2:.4f})")
    lines.extend(f"  note: {n}" for n in table.notes)
    return "\n".join(lines)
