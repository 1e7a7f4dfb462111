"""Delimited report files and their companion figures.

Figures use the Agg backend so rendering works headless; every figure is
written next to a tab-separated file carrying the same numbers.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_tsv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def format_table(header: list[str], rows) -> str:
    """Aligned plain-text table for terminal output."""
    cells = [list(map(_cell, row)) for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def render_loss_curve(losses, evals, path: str, title: str,
                      eval_label: str = "validation") -> None:
    """Training loss with the validation metric on a twin axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if losses:
        ax.plot([s for s, _ in losses], [v for _, v in losses],
                color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    if evals:
        ax2 = ax.twinx()
        ax2.plot([s for s, _ in evals], [v for _, v in evals],
                 color="tab:orange", marker="o", label=eval_label)
        ax2.set_ylabel(eval_label)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_sweep(rows, path: str) -> None:
    """Cutoff sweep: F1 at the swept K."""
    ks = [k for k, _ in rows]
    f1s = [f for _, f in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, f1s, marker="o", color="tab:green")
    ax.set_xlabel("K (sentences kept)")
    ax.set_ylabel("F1@M")
    ax.set_xticks(ks)
    ax.grid(True, alpha=0.3)
    ax.set_title("sentence-budget sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_report(out_dir: str, stem: str, losses, evals,
                         eval_label: str) -> list[str]:
    """loss/eval tables plus one figure; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, f"{stem}_loss.tsv")
    write_tsv(p, ["step", "loss"], losses)
    paths.append(p)
    p = os.path.join(out_dir, f"{stem}_eval.tsv")
    write_tsv(p, ["step", eval_label], evals)
    paths.append(p)
    p = os.path.join(out_dir, f"{stem}_loss.png")
    render_loss_curve(losses, evals, p, f"{stem} training", eval_label)
    paths.append(p)
    return paths
