"""Figure rendering for sweep tables and training curves.

Every CLI command that writes a curve CSV also drops a PNG next to it unless
figures are disabled. Rendering is headless (Agg backend).
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .hardmetrics import SweepTable
from .trainer import CollapseReport, TrainHistory, WarmStartReport

FIGURE_DPI = 120


def _pick_lines(count: int, limit: int = 6) -> np.ndarray:
    if count <= limit:
        return np.arange(count)
    return np.unique(np.round(np.linspace(0, count - 1, limit)).astype(int))


def sweep_figure(table: SweepTable, path: str) -> str:
    fp = table.fp_values
    fn = table.fn_values
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    fn_lines = _pick_lines(fn.size)
    fp_lines = _pick_lines(fp.size)

    for j in fn_lines:
        axes[0, 0].plot(fp, table.iou[j], label=f"FN={fn[j]:g}")
        axes[0, 1].plot(fp, np.abs(table.d_iou_d_fp[j]), label=f"FN={fn[j]:g}")
        axes[1, 0].plot(fp, table.uoi[j], label=f"FN={fn[j]:g}")
        axes[1, 1].plot(fp, table.d_uoi_d_fp[j], label=f"FN={fn[j]:g}")
    for i in fp_lines:
        axes[0, 2].plot(fn, table.d_iou_d_fn[:, i], label=f"FP={fp[i]:g}")
        axes[1, 2].plot(fn, np.abs(table.d_uoi_d_fn[:, i]), label=f"FP={fp[i]:g}")

    titles = [
        ("IOU vs FP", "FP"),
        ("|dIOU/dFP| vs FP", "FP"),
        ("dIOU/dFN vs FN", "FN"),
        ("UOI vs FP", "FP"),
        ("dUOI/dFP vs FP", "FP"),
        ("|dUOI/dFN| vs FN", "FN"),
    ]
    for ax, (title, xlabel) in zip(axes.flat, titles):
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.legend(fontsize=7)
    axes[0, 1].set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def history_figure(history: TrainHistory, path: str, title: str = "training run") -> str:
    fig, (ax_loss, ax_iou) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(history.iterations, history.loss_values, color="tab:red")
    ax_loss.set_title(f"{title}: objective")
    ax_loss.set_xlabel("iteration")
    ax_iou.plot(history.iterations, history.mean_iou, label="mean IOU", color="tab:blue")
    ax_iou.plot(history.iterations, history.bg_fraction, label="bg fraction", color="tab:gray")
    ax_iou.set_ylim(0.0, 1.05)
    ax_iou.set_title(f"{title}: prediction quality")
    ax_iou.set_xlabel("iteration")
    ax_iou.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def collapse_figure(report: CollapseReport, path: str) -> str:
    fig, (ax_iou, ax_bg) = plt.subplots(1, 2, figsize=(10, 4))
    for name, hist in (("iou gain", report.iou_run), ("uoi loss", report.uoi_run)):
        ax_iou.plot(hist.iterations, hist.mean_iou, label=name)
        ax_bg.plot(hist.iterations, hist.bg_fraction, label=name)
    ax_iou.set_title("mean IOU")
    ax_bg.set_title("background fraction")
    for ax in (ax_iou, ax_bg):
        ax.set_xlabel("iteration")
        ax.set_ylim(0.0, 1.05)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def warmstart_figure(report: WarmStartReport, path: str) -> str:
    offset = int(report.warmup.iterations[-1])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(report.warmup.iterations, report.warmup.mean_iou, color="black", label="ce warmup")
    for name, hist in (("ce", report.ce), ("uoi", report.uoi), ("combined", report.combined)):
        ax.plot(hist.iterations + offset, hist.mean_iou, label=f"{name} branch")
    ax.axvline(offset, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean IOU")
    ax.set_title("warm start: branch comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path
