"""Experiment reports: result rows, pass/fail checks, CSV and gnuplot output."""

import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class ReportRow:
    N: int
    tau: float
    metric: str
    value: float
    stderr: float = 0.0


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float = math.nan
    threshold: float = math.nan
    detail: str = ""


@dataclass
class ExperimentReport:
    experiment: str
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, N, tau, metric, value, stderr=0.0):
        self.rows.append(ReportRow(int(N), float(tau), metric, float(value), float(stderr)))

    def check(self, name, passed, value=math.nan, threshold=math.nan, detail=""):
        self.checks.append(Check(name, bool(passed), float(value), float(threshold), detail))

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def metric(self, name):
        """Rows of one metric as ``{(N, tau): (value, stderr)}``."""
        return {(r.N, r.tau): (r.value, r.stderr) for r in self.rows if r.metric == name}

    def write(self, out_dir):
        """Write ``<experiment>.csv``, ``_checks.csv``, ``_meta.txt`` and ``.gp``.

        The two CSV files depend only on the configuration and seed; run-specific
        data (wall time) goes to the metadata file.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.experiment.replace("-", "_")
        paths = {
            "rows": out / f"{stem}.csv",
            "checks": out / f"{stem}_checks.csv",
            "meta": out / f"{stem}_meta.txt",
            "plot": out / f"{stem}.gp",
        }
        with open(paths["rows"], "w", encoding="utf-8", newline="") as fh:
            fh.write("N,tau,metric,value,stderr\n")
            for r in self.rows:
                fh.write(f"{r.N},{r.tau!r},{r.metric},{r.value!r},{r.stderr!r}\n")
        with open(paths["checks"], "w", encoding="utf-8", newline="") as fh:
            fh.write("check,passed,value,threshold,detail\n")
            for c in self.checks:
                detail = c.detail.replace('"', "'")
                fh.write(f'{c.name},{int(c.passed)},{c.value!r},{c.threshold!r},"{detail}"\n')
        with open(paths["meta"], "w", encoding="utf-8") as fh:
            for key, val in self.metadata.items():
                fh.write(f"{key}: {val}\n")
        paths["plot"].write_text(gnuplot_script(self, paths["rows"].name), encoding="utf-8")
        return paths


def gnuplot_script(report, csv_name):
    """Log-log plot of every metric against N, one curve per (metric, tau)."""
    series = sorted({(r.metric, r.tau) for r in report.rows})
    lines = [
        "set datafile separator ','",
        "set key outside",
        "set logscale xy",
        "set xlabel 'N'",
        "set ylabel 'value'",
        f"set title '{report.experiment}'",
        f"set terminal pngcairo size 900,600",
        f"set output '{report.experiment.replace('-', '_')}.png'",
    ]
    plots = [
        f"'{csv_name}' using ((strcol(3) eq '{m}' && $2 == {t!r}) ? $1 : 1/0):(abs($4)) "
        f"with linespoints title '{m} tau={t:g}'"
        for m, t in series
    ]
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def git_revision(cwd=None):
    try:
        res = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=cwd, capture_output=True, text=True, timeout=5
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"
