"""Figure rendering for the CLI report paths (PNG, Agg backend, reproducible bytes)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .serialization import to_uint8  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "savefig.dpi": 100,
}


def save(fig, path):
    # no Software/date chunks, so identical figures give identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def image_row(images, titles, path, width_per_panel=2.0):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=(width_per_panel * len(images), 2.3))
        axes = np.atleast_1d(axes)
        for ax, img, title in zip(axes, images, titles):
            ax.imshow(to_uint8(img), interpolation="nearest")
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        save(fig, path)


def sweep_figure(rows, path):
    """Style loss, content loss and PSNR against strength S."""
    S = [r["S"] for r in rows]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(8.0, 2.4))
        for ax, key, label in zip(axes, ("style_loss", "content_loss", "psnr"),
                                  ("style loss (vs style)", "content loss (vs content)",
                                   "PSNR vs content [dB]")):
            ax.plot(S, [r[key] for r in rows], marker="o", color="k")
            ax.set_xlabel("strength S")
            ax.set_ylabel(label)
        fig.tight_layout()
        save(fig, path)

