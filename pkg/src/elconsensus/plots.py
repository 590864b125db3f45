"""Static SVG figures of a trace: ``q + b_tilde``, ``q_dot`` and ``q`` against time."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .simulate import SimTrace  # noqa: E402

FIGURES = (
    ("q_plus_b_tilde.svg", "q_plus_b_tilde", r"$q + \tilde b$ (m)", "Bias-compensated relative position"),
    ("q_dot.svg", "q_dot", r"$\dot q$ (m/s)", "Relative velocity"),
    ("q.svg", "q", r"$q$ (m)", "Relative position"),
)


def emit_plots(trace: SimTrace, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context({"svg.hashsalt": "elconsensus", "svg.fonttype": "none"}):
        for fname, attr, ylabel, title in FIGURES:
            data = getattr(trace, attr)
            fig, ax = plt.subplots(figsize=(7, 4))
            for i in range(trace.n):
                for c, axis in enumerate("xyz"):
                    ax.plot(trace.t, data[:, i, c], lw=0.9, label=f"{i + 1}{axis}")
            ax.set_xlabel("time (s)")
            ax.set_ylabel(ylabel)
            ax.set_title(title)
            ax.grid(alpha=0.3)
            if trace.n * 3 <= 30:
                ax.legend(ncol=trace.n, fontsize=6, loc="upper right")
            fig.tight_layout()
            path = out_dir / fname
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
