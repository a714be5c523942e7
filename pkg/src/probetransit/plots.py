"""SVG figures for estimation and calibration reports.

Figures are rendered through ``matplotlib.figure.Figure`` (no pyplot state).
With ``timestamps=False`` the SVG carries no date and uses a fixed id salt,
so identical inputs give byte-identical files.
"""

import math

import matplotlib
from matplotlib.figure import Figure

SVG_SALT = "probetransit"
CAPACITY = 83

_STYLE = {
    "svg.hashsalt": SVG_SALT,
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path, timestamps):
    metadata = None if timestamps else {"Date": None}
    with matplotlib.rc_context(_STYLE):
        fig.savefig(path, format="svg", metadata=metadata)


def _new(width=7.0, height=3.2):
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(width, height))
        ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def entries_figure(obs, path, timestamps=False):
    """Ticket validations b and Wi-Fi entries i over the stop sequence."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new()
        x = list(range(len(obs.stops)))
        if obs.b is not None:
            ax.plot(x, list(obs.b), marker="o", color="tab:blue", label="ticket validations (b)")
        ax.plot(x, list(obs.i), marker="s", color="tab:orange", label="Wi-Fi entries (i)")
        ax.set_xticks(x)
        ax.set_xticklabels(obs.stops, rotation=60, ha="right")
        ax.set_xlabel("stop")
        ax.set_ylabel("passenger entries")
        ax.set_title(f"trip {obs.trip_id} (route {obs.route_id})")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
    _save(fig, path, timestamps)


def load_figure(obs, path, capacity=CAPACITY, timestamps=False):
    """Deduced load c against segment device counts w, with the capacity line."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new()
        x = list(range(len(obs.stops)))
        ax.step(x, list(obs.c), where="post", color="tab:green", label="deduced load (c)")
        ax.plot(x, list(obs.w), marker="^", linestyle="none", color="tab:purple",
                label="distinct devices per segment (w)")
        top = max([int(v) for v in obs.c] + [int(v) for v in obs.w] + [1])
        if top >= 0.5 * capacity:
            ax.axhline(capacity, color="tab:red", linestyle="--", linewidth=0.8, label=f"capacity {capacity}")
            top = max(top, capacity)
        ax.set_ylim(0, top * 1.1 + 0.5)
        ax.set_xticks(x)
        ax.set_xticklabels(obs.stops, rotation=60, ha="right")
        ax.set_xlabel("stop")
        ax.set_ylabel("passengers on board")
        ax.set_title(f"trip {obs.trip_id} load")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
    _save(fig, path, timestamps)


def od_figure(od, path, timestamps=False):
    n = len(od.stop_ids)
    size = max(3.5, 0.35 * n + 2.0)
    with matplotlib.rc_context(_STYLE | {"axes.grid": False}):
        fig, ax = _new(size, size)
        im = ax.imshow(od.counts, cmap="Blues", origin="upper")
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xticklabels(od.stop_ids, rotation=90)
        ax.set_yticklabels(od.stop_ids)
        ax.set_xlabel("exit stop")
        ax.set_ylabel("entry stop")
        ax.set_title(f"OD {od.scope}: {od.total} devices")
        for r in range(n):
            for c in range(n):
                v = int(od.counts[r, c])
                if v:
                    ax.text(c, r, str(v), ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
    _save(fig, path, timestamps)


def modal_rssi_figure(rows, path, timestamps=False):
    """rows: (route, min_rssi, share)."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new(max(4.0, 0.5 * len(rows) + 2), 3.2)
        labels = [f"{r}\n{m}" for r, m, _ in rows]
        ax.bar(range(len(rows)), [s for _, _, s in rows], color="tab:blue")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels)
        ax.set_ylim(0, 1)
        ax.set_xlabel("route / modal min RSSI (dBm)")
        ax.set_ylabel("share of instances")
        fig.tight_layout()
    _save(fig, path, timestamps)


def r2_ci_figure(rows, path, timestamps=False):
    """rows: (route, case_label, lower, upper, mean); NaN rows are skipped."""
    rows = [r for r in rows if not any(math.isnan(v) for v in r[2:])]
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new(max(4.0, 0.6 * len(rows) + 2), 3.4)
        for k, (route, label, lo, hi, mean) in enumerate(rows):
            color = "tab:blue" if label.startswith("A") else "tab:orange"
            ax.errorbar([k], [mean], yerr=[[mean - lo], [hi - mean]], fmt="o", color=color, capsize=3)
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels([f"{r}\n{lab}" for r, lab, *_ in rows])
        ax.set_ylabel("R2 (mean, 95% CI)")
        fig.tight_layout()
    _save(fig, path, timestamps)
