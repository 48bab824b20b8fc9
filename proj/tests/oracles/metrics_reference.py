"""Reference values for the COD metric suite.

A direct numpy/scipy transcription of the S-measure, weighted F-measure,
threshold-swept F-measure and E-measure, and MAE. Writes the cases consumed
by the C++ metric tests:

    python3 tests/oracles/metrics_reference.py tests/data/metric_cases.json
"""

import json
import sys

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt, gaussian_filter

EPS = np.spacing(1)


def prepare(pred, gt):
    gt = gt.astype(bool)
    pred = pred.astype(np.float64)
    if pred.max() != pred.min():
        pred = (pred - pred.min()) / (pred.max() - pred.min())
    return pred, gt


def mae(pred, gt):
    pred, gt = prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def s_object(pred, gt):
    x = np.mean(pred[gt == 1])
    sigma_x = np.std(pred[gt == 1], ddof=1)
    return 2 * x / (x**2 + 1 + sigma_x + EPS)


def object_score(pred, gt):
    fg = pred * gt
    bg = (1 - pred) * (1 - gt)
    u = np.mean(gt)
    return u * s_object(fg, gt) + (1 - u) * s_object(bg, 1 - gt)


def centroid(gt):
    h, w = gt.shape
    if np.count_nonzero(gt) == 0:
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def ssim(pred, gt):
    h, w = pred.shape
    n = h * w
    x = np.mean(pred)
    y = np.mean(gt)
    sigma_x = np.sum((pred - x) ** 2) / (n - 1)
    sigma_y = np.sum((gt - y) ** 2) / (n - 1)
    sigma_xy = np.sum((pred - x) * (gt - y)) / (n - 1)
    alpha = 4 * x * y * sigma_xy
    beta = (x**2 + y**2) * (sigma_x + sigma_y)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def region_score(pred, gt):
    x, y = centroid(gt)
    h, w = gt.shape
    area = h * w
    w1 = x * y / area
    w2 = y * (w - x) / area
    w3 = (h - y) * x / area
    w4 = 1 - w1 - w2 - w3
    return (
        w1 * ssim(pred[0:y, 0:x], gt[0:y, 0:x])
        + w2 * ssim(pred[0:y, x:w], gt[0:y, x:w])
        + w3 * ssim(pred[y:h, 0:x], gt[y:h, 0:x])
        + w4 * ssim(pred[y:h, x:w], gt[y:h, x:w])
    )


def s_measure(pred, gt, alpha=0.5):
    pred, gt = prepare(pred, gt)
    gt = gt.astype(np.float64)
    y = np.mean(gt)
    if y == 0:
        return float(1 - np.mean(pred))
    if y == 1:
        return float(np.mean(pred))
    return float(max(0.0, alpha * object_score(pred, gt) + (1 - alpha) * region_score(pred, gt)))


def gauss2d(size=7, sigma=5):
    m = (size - 1) / 2
    y, x = np.ogrid[-m : m + 1, -m : m + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def weighted_f(pred, gt, beta=1.0):
    pred, gt = prepare(pred, gt)
    if not gt.any():
        return 0.0
    dst, idx = distance_transform_edt(gt == 0, return_indices=True)
    e = np.abs(pred - gt)
    et = np.copy(e)
    et[gt == 0] = et[idx[0][gt == 0], idx[1][gt == 0]]
    ea = convolve(et, weights=gauss2d(), mode="constant", cval=0)
    min_e_ea = np.where(gt & (ea < e), ea, e)
    b = np.where(gt == 0, 2 - np.exp(np.log(0.5) / 5 * dst), np.ones_like(gt))
    ew = min_e_ea * b
    tpw = np.sum(gt) - np.sum(ew[gt == 1])
    fpw = np.sum(ew[gt == 0])
    r = 1 - np.mean(ew[gt == 1])
    p = tpw / (tpw + fpw + EPS)
    return float((1 + beta**2) * r * p / (r + beta**2 * p + EPS))


def swept_counts(pred, gt):
    q = (pred * 255).astype(np.uint8)
    bins = np.linspace(0, 256, 257)
    fg_hist, _ = np.histogram(q[gt], bins=bins)
    bg_hist, _ = np.histogram(q[~gt], bins=bins)
    return np.cumsum(np.flip(fg_hist)), np.cumsum(np.flip(bg_hist))


def f_curve(pred, gt, beta2=0.3):
    pred, gt = prepare(pred, gt)
    tps, fps = swept_counts(pred, gt)
    ps = (tps + fps).astype(np.float64)
    ps[ps == 0] = 1
    t = max(np.count_nonzero(gt), 1)
    precision = tps / ps
    recall = tps / t
    num = (1 + beta2) * precision * recall
    den = np.where(num == 0, 1, beta2 * precision + recall)
    return num / den


def e_curve(pred, gt):
    pred, gt = prepare(pred, gt)
    n = gt.size
    gt_fg = np.count_nonzero(gt)
    fg_fg, fg_bg = swept_counts(pred, gt)
    pred_fg = fg_fg + fg_bg
    pred_bg = n - pred_fg
    if gt_fg == 0:
        total = pred_bg.astype(np.float64)
    elif gt_fg == n:
        total = pred_fg.astype(np.float64)
    else:
        bg_fg = gt_fg - fg_fg
        bg_bg = pred_bg - bg_fg
        mp = pred_fg / n
        mg = gt_fg / n
        parts = [fg_fg, fg_bg, bg_fg, bg_bg]
        combos = [(1 - mp, 1 - mg), (1 - mp, -mg), (-mp, 1 - mg), (-mp, -mg)]
        total = np.zeros(256)
        for part, (a, b) in zip(parts, combos):
            align = 2 * a * b / (a**2 + b**2 + EPS)
            total += (align + 1) ** 2 / 4 * part
    return total / n


def all_metrics(pred, gt):
    f = f_curve(pred, gt)
    e = e_curve(pred, gt)
    return {
        "s_alpha": s_measure(pred, gt),
        "f_beta_w": weighted_f(pred, gt),
        "f_mean": float(np.mean(f)),
        "f_max": float(np.max(f)),
        "e_mean": float(np.mean(e)),
        "e_max": float(np.max(e)),
        "mae": mae(pred, gt),
    }


def make_cases(count=10, size=16, seed=20240611):
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(count):
        field = gaussian_filter(rng.standard_normal((size, size)), sigma=2.0)
        gt = field > np.quantile(field, rng.uniform(0.45, 0.8))
        if k % 3 == 0:
            pred = rng.uniform(0, 1, (size, size))
        else:
            pred = np.clip(gt * rng.uniform(0.5, 0.9) + rng.normal(0, 0.25, (size, size)), 0, 1)
            pred = gaussian_filter(pred, sigma=rng.uniform(0.3, 1.2))
        cases.append(
            {
                "height": size,
                "width": size,
                "pred": pred.ravel().tolist(),
                "gt": gt.astype(int).ravel().tolist(),
                "expected": all_metrics(pred, gt.astype(int)),
            }
        )
    return cases


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "metric_cases.json"
    with open(out, "w") as fh:
        json.dump({"cases": make_cases()}, fh, indent=1)
