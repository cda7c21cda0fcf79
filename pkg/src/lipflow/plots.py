"""Figure rendering for report files: one PNG per check next to the CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_report_png(report: dict, path) -> None:
    """Render a convergence report (or diagnostic) dictionary to a PNG."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if "points" in report:
        params = [p for p, _ in report["points"]]
        errors = [e for _, e in report["points"]]
        positive = all(p > 0 for p in params) and all(e > 0 for e in errors)
        if positive:
            ax.loglog(params, errors, "o-", lw=1.2, ms=4)
        else:
            ax.plot(params, errors, "o-", lw=1.2, ms=4)
        ax.axhline(report["threshold"], color="tab:red", ls="--", lw=1.0,
                   label=f"threshold {report['threshold']:.3g}")
        ax.set_xlabel("parameter")
        ax.set_ylabel("error")
        title = f"{report['label']}  [{report['verdict']}]"
        if report.get("fitted_rate") is not None:
            title += f"  rate={report['fitted_rate']:.2f}"
        ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
    else:
        deltas = [d for d, _ in report["worst_cell_mass"]]
        masses = [m for _, m in report["worst_cell_mass"]]
        ax.plot(deltas, masses, "s-", lw=1.2, ms=4, label="worst-cell mass")
        for frac, m in report.get("tail_mass", []):
            ax.axhline(m, ls=":", lw=0.8, color="gray")
        ax.set_xlabel("set measure fraction")
        ax.set_ylabel("mass")
        ax.set_title(f"{report['label']}  [diagnostic]  sup L1 = {report['l1_sup']:.3g}")
        ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
