"""Histogram-matching color transfer by exact sorted-rank interpolation."""
import torch

from .errors import ShapeError


def _quantile_map(src, ref):
    n, m = src.numel(), ref.numel()
    order = torch.sort(src, stable=True).indices
    ref_sorted = torch.sort(ref).values
    if n == 1:
        pos = torch.zeros(1, dtype=torch.float64)
    else:
        pos = torch.arange(n, dtype=torch.float64) * ((m - 1) / (n - 1))
    lo = pos.floor().long().clamp(max=m - 1)
    hi = (lo + 1).clamp(max=m - 1)
    frac = (pos - lo.to(torch.float64)).to(ref_sorted.dtype)
    values = ref_sorted[lo] + (ref_sorted[hi] - ref_sorted[lo]) * frac
    out = torch.empty_like(src, dtype=ref_sorted.dtype)
    out[order] = values
    return out


def histogram_match(src, ref) -> torch.Tensor:
    """Map each channel of ``src`` onto the empirical distribution of ``ref``.

    The pixel of rank r (stable order) among n receives the reference quantile at
    r/(n-1), linearly interpolated between sorted reference values. Images may
    differ in size but must have the same number of channels.
    """
    src = torch.as_tensor(src, dtype=torch.float64)
    ref = torch.as_tensor(ref, dtype=torch.float64)
    if src.dim() != 3 or ref.dim() != 3 or src.shape[0] != ref.shape[0]:
        raise ShapeError(f"incompatible images {tuple(src.shape)} and {tuple(ref.shape)}")
    if src[0].numel() == 0 or ref[0].numel() == 0:
        raise ShapeError("empty image")
    out = torch.stack([
        _quantile_map(s.reshape(-1), r.reshape(-1)).reshape(s.shape)
        for s, r in zip(src, ref)
    ])
    return out.clamp(0.0, 1.0)
