"""Static SVG figures with byte-stable output."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ValidationError  # noqa: E402

_STYLE = {"svg.hashsalt": "sgnp", "svg.fonttype": "path", "figure.dpi": 100}


def _save(fig, path):
    # no timestamp and a fixed id salt keep repeated renders byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def band(mean, var, width=2.0):
    """Lower and upper edges of ``mean +- width * sd`` (variance clipped at zero)."""
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    mean = np.asarray(mean, dtype=float)
    return mean - width * sd, mean + width * sd


def plot_trace(trace, path):
    steps = [r[0] for r in trace]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, [r[2] for r in trace], color="black", lw=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save(fig, path)


def plot_predictions(Xq, mean, var, prob, context, path):
    """1D: mean with a +-2 sd band; 2D: probability (or mean) surface."""
    Xq = np.asarray(Xq, dtype=float)
    d = Xq.shape[1]
    if d > 2:
        raise ValidationError(f"cannot plot {d}D predictions (only 1D and 2D are supported)")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4) if d == 1 else (5, 4.5))
        if d == 1:
            order = np.argsort(Xq[:, 0], kind="stable")
            x = Xq[order, 0]
            lo, hi = band(mean[order], var[order])
            ax.fill_between(x, lo, hi, color="black", alpha=0.2, lw=0)
            ax.plot(x, np.asarray(mean)[order], color="black", lw=1.2)
            if context is not None and len(context[0]):
                ax.scatter(context[0][:, 0], context[1], s=12, color="tab:red", zorder=3)
            ax.set_xlabel("x")
            ax.set_ylabel("y")
        else:
            surface = prob if prob is not None else mean
            if len(Xq) >= 3:
                tri = ax.tricontourf(Xq[:, 0], Xq[:, 1], surface, levels=np.linspace(0, 1, 11)
                                     if prob is not None else 10, cmap="RdBu_r")
                fig.colorbar(tri, ax=ax, label="p(y=1)" if prob is not None else "mean")
            if context is not None and len(context[0]):
                Xc, yc = context
                ax.scatter(Xc[:, 0], Xc[:, 1], c=np.where(yc > 0.5, "tab:red", "tab:blue"),
                           s=14, edgecolors="black", linewidths=0.4)
            ax.set_xlabel("x0")
            ax.set_ylabel("x1")
            ax.set_aspect("equal")
        fig.tight_layout()
        _save(fig, path)


def plot_report(report, path):
    """Per-task log-likelihoods with the aggregate mean."""
    rows = report["tasks"]
    ll = np.array([r["ll"] for r in rows], dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(np.arange(len(ll)), ll, "o", color="black", ms=3)
        if len(ll):
            ax.axhline(ll.mean(), color="tab:red", lw=1)
        ax.set_xlabel("task")
        ax.set_ylabel("log-likelihood per target point")
        ax.set_title(str(report.get("model", "")))
        fig.tight_layout()
        _save(fig, path)
