"""Hot numeric kernels with a numba path and a pure-numpy path.

Layout is channels-last throughout: images are ``(B, H, W, C)``; convolution
weights are flattened to ``(kh*kw*C, O)`` with row index ``(di*kw + dj)*C + c``.
Inputs to the convolution kernels are already zero-padded.

The dispatching names at the bottom pick numba when ``_accel.USE_NUMBA`` is
set; both variants stay importable so the benchmark can compare them.
"""
import numpy as np

from ._accel import USE_NUMBA

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _window(xp, di, dj, stride, Ho, Wo):
    return xp[:, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride, :]


def conv_forward_np(xp, w2, kh, kw, stride, Ho, Wo):
    B, C = xp.shape[0], xp.shape[3]
    O = w2.shape[1]
    out = np.zeros((B, Ho, Wo, O), dtype=xp.dtype)
    for di in range(kh):
        for dj in range(kw):
            k = (di * kw + dj) * C
            out += _window(xp, di, dj, stride, Ho, Wo) @ w2[k:k + C]
    return out


def conv_grad_input_np(dout, w2, kh, kw, stride, Hp, Wp):
    B, Ho, Wo, O = dout.shape
    C = w2.shape[0] // (kh * kw)
    dxp = np.zeros((B, Hp, Wp, C), dtype=dout.dtype)
    for di in range(kh):
        for dj in range(kw):
            k = (di * kw + dj) * C
            _window(dxp, di, dj, stride, Ho, Wo)[...] += dout @ w2[k:k + C].T
    return dxp


def conv_grad_weight_np(xp, dout, kh, kw, stride):
    B, Ho, Wo, O = dout.shape
    C = xp.shape[3]
    d2 = dout.reshape(-1, O)
    dw2 = np.empty((kh * kw * C, O), dtype=xp.dtype)
    for di in range(kh):
        for dj in range(kw):
            k = (di * kw + dj) * C
            dw2[k:k + C] = _window(xp, di, dj, stride, Ho, Wo).reshape(-1, C).T @ d2
    return dw2


def paint_disks_np(img, cx, cy, r, colors):
    H, W = img.shape[:2]
    for n in range(len(cx)):
        rr = r[n]
        i0 = max(int(np.floor(cy[n] - rr)), 0)
        i1 = min(int(np.ceil(cy[n] + rr)) + 1, H)
        j0 = max(int(np.floor(cx[n] - rr)), 0)
        j1 = min(int(np.ceil(cx[n] + rr)) + 1, W)
        if i0 >= i1 or j0 >= j1:
            continue
        ii = np.arange(i0, i1)[:, None] + 0.5 - cy[n]
        jj = np.arange(j0, j1)[None, :] + 0.5 - cx[n]
        mask = ii * ii + jj * jj <= rr * rr
        img[i0:i1, j0:j1][mask] = colors[n]
    return img


def poly_kernel_sums_np(x, y, gamma, coef, degree):
    kxx = (gamma * (x @ x.T) + coef) ** degree
    kyy = (gamma * (y @ y.T) + coef) ** degree
    kxy = (gamma * (x @ y.T) + coef) ** degree
    sxx = kxx.sum() - np.trace(kxx)
    syy = kyy.sum() - np.trace(kyy)
    return sxx, syy, kxy.sum()


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _im2col_one(xb, kh, kw, stride, Ho, Wo, cols):
    C = xb.shape[2]
    for i in range(Ho):
        for j in range(Wo):
            r = i * Wo + j
            for di in range(kh):
                for dj in range(kw):
                    k = (di * kw + dj) * C
                    for c in range(C):
                        cols[r, k + c] = xb[i * stride + di, j * stride + dj, c]


def _col2im_one(dcols, kh, kw, stride, Ho, Wo, dxb):
    C = dxb.shape[2]
    for i in range(Ho):
        for j in range(Wo):
            r = i * Wo + j
            for di in range(kh):
                for dj in range(kw):
                    k = (di * kw + dj) * C
                    for c in range(C):
                        dxb[i * stride + di, j * stride + dj, c] += dcols[r, k + c]


def _conv_forward_nb(xp, w2, kh, kw, stride, Ho, Wo):
    B = xp.shape[0]
    O = w2.shape[1]
    out = np.empty((B, Ho * Wo, O), dtype=xp.dtype)
    cols = np.empty((Ho * Wo, w2.shape[0]), dtype=xp.dtype)
    for b in range(B):
        _im2col_one(xp[b], kh, kw, stride, Ho, Wo, cols)
        out[b] = np.dot(cols, w2)
    return out.reshape(B, Ho, Wo, O)


def _conv_grad_input_nb(dout, w2, kh, kw, stride, Hp, Wp):
    B, Ho, Wo, O = dout.shape
    C = w2.shape[0] // (kh * kw)
    dxp = np.zeros((B, Hp, Wp, C), dtype=dout.dtype)
    w2t = np.ascontiguousarray(w2.T)
    for b in range(B):
        d2 = np.ascontiguousarray(dout[b]).reshape(Ho * Wo, O)
        dcols = np.dot(d2, w2t)
        _col2im_one(dcols, kh, kw, stride, Ho, Wo, dxp[b])
    return dxp


def _conv_grad_weight_nb(xp, dout, kh, kw, stride):
    B, Ho, Wo, O = dout.shape
    C = xp.shape[3]
    dw2 = np.zeros((kh * kw * C, O), dtype=xp.dtype)
    cols = np.empty((Ho * Wo, kh * kw * C), dtype=xp.dtype)
    for b in range(B):
        _im2col_one(xp[b], kh, kw, stride, Ho, Wo, cols)
        d2 = np.ascontiguousarray(dout[b]).reshape(Ho * Wo, O)
        dw2 += np.dot(cols.T, d2)
    return dw2


def _paint_disks_nb(img, cx, cy, r, colors):
    H, W = img.shape[0], img.shape[1]
    for n in range(cx.shape[0]):
        rr = r[n]
        i0 = max(int(np.floor(cy[n] - rr)), 0)
        i1 = min(int(np.ceil(cy[n] + rr)) + 1, H)
        j0 = max(int(np.floor(cx[n] - rr)), 0)
        j1 = min(int(np.ceil(cx[n] + rr)) + 1, W)
        for i in range(i0, i1):
            di = i + 0.5 - cy[n]
            for j in range(j0, j1):
                dj = j + 0.5 - cx[n]
                if di * di + dj * dj <= rr * rr:
                    for c in range(img.shape[2]):
                        img[i, j, c] = colors[n, c]
    return img


def _kernel_sum(g, gamma, coef, degree, skip_diag):
    total = 0.0
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            if skip_diag and i == j:
                continue
            total += (gamma * g[i, j] + coef) ** degree
    return total


def _poly_kernel_sums_nb(x, y, gamma, coef, degree):
    # Gram matrices via BLAS, then a fused power-and-sum pass
    sxx = _kernel_sum(np.dot(x, x.T), gamma, coef, degree, True)
    syy = _kernel_sum(np.dot(y, y.T), gamma, coef, degree, True)
    sxy = _kernel_sum(np.dot(x, y.T), gamma, coef, degree, False)
    return sxx, syy, sxy


if _numba is not None:
    _jit = _numba.njit(cache=True)
    _im2col_one = _jit(_im2col_one)
    _col2im_one = _jit(_col2im_one)
    _kernel_sum = _jit(_kernel_sum)
    conv_forward_nb = _jit(_conv_forward_nb)
    conv_grad_input_nb = _jit(_conv_grad_input_nb)
    conv_grad_weight_nb = _jit(_conv_grad_weight_nb)
    paint_disks_nb = _jit(_paint_disks_nb)
    poly_kernel_sums_nb = _jit(_poly_kernel_sums_nb)
else:  # pragma: no cover
    conv_forward_nb = conv_grad_input_nb = conv_grad_weight_nb = None
    paint_disks_nb = poly_kernel_sums_nb = None


IMPLEMENTATIONS = {
    "numpy": {
        "conv_forward": conv_forward_np,
        "conv_grad_input": conv_grad_input_np,
        "conv_grad_weight": conv_grad_weight_np,
        "paint_disks": paint_disks_np,
        "poly_kernel_sums": poly_kernel_sums_np,
    },
    "numba": {
        "conv_forward": conv_forward_nb,
        "conv_grad_input": conv_grad_input_nb,
        "conv_grad_weight": conv_grad_weight_nb,
        "paint_disks": paint_disks_nb,
        "poly_kernel_sums": poly_kernel_sums_nb,
    },
}

_active = IMPLEMENTATIONS["numba" if USE_NUMBA else "numpy"]


def _same(a, dtype):
    """C-contiguous view of ``a`` in ``dtype`` (copies only when needed)."""
    return np.ascontiguousarray(a, dtype=dtype)


def conv_forward(xp, w2, kh, kw, stride, Ho, Wo):
    xp = np.ascontiguousarray(xp)
    return _active["conv_forward"](xp, _same(w2, xp.dtype), kh, kw, stride, Ho, Wo)


def conv_grad_input(dout, w2, kh, kw, stride, Hp, Wp):
    dout = np.ascontiguousarray(dout)
    return _active["conv_grad_input"](dout, _same(w2, dout.dtype), kh, kw, stride, Hp, Wp)


def conv_grad_weight(xp, dout, kh, kw, stride):
    xp = np.ascontiguousarray(xp)
    return _active["conv_grad_weight"](xp, _same(dout, xp.dtype), kh, kw, stride)


def paint_disks(img, cx, cy, r, colors):
    return _active["paint_disks"](img, np.asarray(cx, float), np.asarray(cy, float),
                                  np.asarray(r, float), np.ascontiguousarray(colors, dtype=img.dtype))


def poly_kernel_sums(x, y, gamma, coef, degree):
    sxx, syy, sxy = _active["poly_kernel_sums"](np.ascontiguousarray(x, float),
                                                np.ascontiguousarray(y, float),
                                                float(gamma), float(coef), int(degree))
    return float(sxx), float(syy), float(sxy)
