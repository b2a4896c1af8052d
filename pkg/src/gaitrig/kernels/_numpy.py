"""Pure numpy implementations of the hot temporal-convolution kernels.

Layout contract (shared with the compiled backend), channels-last with
implicit symmetric zero padding of the time axis:
  im2col:  x (N, T, V, C)  ->  cols (N, To, V, width*C), flat index k*C + c
  col2im:  scatter-add the adjoint of im2col back to (N, T, V, C)
"""

import numpy as np

BACKEND = "numpy"


def out_frames(t: int, width: int, stride: int, pad: int) -> int:
    return (t + 2 * pad - width) // stride + 1


def temporal_im2col(x: np.ndarray, width: int, stride: int, pad: int) -> np.ndarray:
    n, t, v, c = x.shape
    t_out = out_frames(t, width, stride, pad)
    cols = np.zeros((n, t_out, v, width * c), dtype=x.dtype)
    for k in range(width):
        # output rows whose tap k lands inside the unpadded signal
        first = max(0, -(-(pad - k) // stride))
        last = min(t_out, -(-(t + pad - k) // stride))
        if first >= last:
            continue
        src = x[:, first * stride + k - pad : (last - 1) * stride + k - pad + 1 : stride]
        cols[:, first:last, :, k * c : (k + 1) * c] = src
    return cols


def temporal_col2im(
    cols: np.ndarray, width: int, stride: int, pad: int, t: int
) -> np.ndarray:
    n, t_out, v, wc = cols.shape
    c = wc // width
    out = np.zeros((n, t, v, c), dtype=cols.dtype)
    for k in range(width):
        first = max(0, -(-(pad - k) // stride))
        last = min(t_out, -(-(t + pad - k) // stride))
        if first >= last:
            continue
        dst = out[:, first * stride + k - pad : (last - 1) * stride + k - pad + 1 : stride]
        dst += cols[:, first:last, :, k * c : (k + 1) * c]
    return out
