"""Hole filling for the backgrounds left behind when a foreground is cut out."""
from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

METHODS = ("exemplar", "diffusion")


def inpaint_background(image: np.ndarray, mask: np.ndarray, method: str = "exemplar",
                       patch_size: int = 9) -> np.ndarray:
    """Fill the pixels where ``mask == 1``; all other pixels are returned unchanged."""
    if method not in METHODS:
        raise ValueError(f"unknown inpainting method {method!r}; expected one of {METHODS}")
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("inpainting mask must be binary")
    hole = mask.astype(bool)
    if hole.all():
        raise ValueError("mask covers the entire image; nothing to copy from")
    if not hole.any():
        return image.copy()
    if method == "exemplar":
        filled = exemplar_fill(image, hole, patch_size)
    else:
        filled = diffusion_fill(image, hole)
    out = image.copy()
    out[hole] = np.clip(filled[hole], 0.0, 1.0)
    return out


def diffusion_fill(image: np.ndarray, hole: np.ndarray) -> np.ndarray:
    """Harmonic interpolation: solve Laplace's equation inside the hole with the
    surrounding known pixels as Dirichlet data (Neumann at the image border)."""
    h, w = hole.shape
    img = image.reshape(h, w, -1)
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(hole)
    n = len(ys)
    idx[ys, xs] = np.arange(n)

    rows, cols, vals = [], [], []
    rhs = np.zeros((n, img.shape[2]))
    deg = np.zeros(n)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        deg += ok
        nyo, nxo, src = ny[ok], nx[ok], np.nonzero(ok)[0]
        nb = idx[nyo, nxo]
        unknown = nb >= 0
        rows.append(src[unknown])
        cols.append(nb[unknown])
        vals.append(-np.ones(unknown.sum()))
        np.add.at(rhs, src[~unknown], img[nyo[~unknown], nxo[~unknown]])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(deg)
    a = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    sol = splu(a).solve(rhs)
    out = img.copy()
    out[ys, xs] = sol
    return out.reshape(image.shape)


def _masked_gradients(gray: np.ndarray, known: np.ndarray):
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    ok_x = known[:, 1:] & known[:, :-1]
    ok_y = known[1:, :] & known[:-1, :]
    dx = np.where(ok_x, gray[:, 1:] - gray[:, :-1], 0.0)
    dy = np.where(ok_y, gray[1:, :] - gray[:-1, :], 0.0)
    gx[:, :-1] += dx
    gx[:, 1:] += dx
    gy[:-1, :] += dy
    gy[1:, :] += dy
    return gx / 2, gy / 2


def exemplar_fill(image: np.ndarray, hole: np.ndarray, patch_size: int = 9) -> np.ndarray:
    """Priority-ordered patch copying (confidence x isophote strength at the fill front).

    Source patches are restricted to patches lying entirely in the original
    known region; matching uses SSD over the already-known target pixels.
    """
    if patch_size % 2 == 0 or patch_size < 3:
        raise ValueError("patch_size must be odd and >= 3")
    r = patch_size // 2
    h, w = hole.shape
    img3 = image.reshape(h, w, -1)
    c = img3.shape[2]

    # Pad so every target patch is full-size; padding is neither known nor to-be-filled.
    pad = ((r, r), (r, r))
    img = np.pad(img3, pad + ((0, 0),))
    inside = np.pad(np.ones((h, w), bool), pad)
    todo = np.pad(hole, pad)
    known = inside & ~todo
    conf = known.astype(np.float64)

    src_ok = sliding_window_view(known, (patch_size, patch_size)).all(axis=(2, 3))
    cy, cx = np.nonzero(src_ok)
    if len(cy) == 0:
        log.warning("hole too large for %dx%d exemplar patches; using diffusion fill", patch_size, patch_size)
        return diffusion_fill(image, hole)
    windows = sliding_window_view(img, (patch_size, patch_size), axis=(0, 1))
    cands = windows[cy, cx].transpose(0, 2, 3, 1).reshape(len(cy), -1)  # (N, P*P*C)

    fill_mask = todo.astype(np.float64)
    area = float(patch_size * patch_size)
    while todo.any():
        front = todo & ndimage.binary_dilation(known, structure=np.ones((3, 3), bool))
        if not front.any():
            front = todo
        fy, fx = np.nonzero(front)

        conf_sum = ndimage.uniform_filter(conf, patch_size, mode="constant") * area
        cterm = conf_sum[fy, fx] / area

        gray = img.mean(axis=2)
        gx, gy = _masked_gradients(gray, known)
        kf = ndimage.uniform_filter(known.astype(float), patch_size, mode="constant")
        with np.errstate(invalid="ignore", divide="ignore"):
            mgx = np.nan_to_num(ndimage.uniform_filter(gx, patch_size, mode="constant") / kf)
            mgy = np.nan_to_num(ndimage.uniform_filter(gy, patch_size, mode="constant") / kf)
        ny, nx = np.gradient(ndimage.gaussian_filter(fill_mask, 1.0))
        norm = np.hypot(nx, ny) + 1e-12
        data = np.abs(-mgy[fy, fx] * nx[fy, fx] / norm[fy, fx] + mgx[fy, fx] * ny[fy, fx] / norm[fy, fx])
        prio = cterm * (data + 1e-3)
        k = int(np.argmax(prio))
        py, px = fy[k], fx[k]

        sl = (slice(py - r, py + r + 1), slice(px - r, px + r + 1))
        tgt_known = np.repeat(known[sl].reshape(-1), c)
        target = img[sl].reshape(-1)
        if tgt_known.any():
            diff = cands[:, tgt_known] - target[tgt_known]
            best = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        else:
            best = 0
        patch = cands[best].reshape(patch_size, patch_size, c)
        fill_here = todo[sl].copy()
        img[sl][fill_here] = patch[fill_here]
        conf[sl][fill_here] = cterm[k]
        todo[sl][fill_here] = False
        known[sl][fill_here] = True
        fill_mask[sl][fill_here] = 0.0

    return img[r:r + h, r:r + w].reshape(image.shape)
