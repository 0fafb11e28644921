"""Pure-numpy versions of the kernels in ``_kernels.pyx``.

Same signatures and in-place conventions; used when the extension is not
built or when ``QMPHER_PURE_PYTHON`` is set.
"""

import numpy as np


def forward(weights, biases, x, tanh_out):
    acts = [x]
    cur = x
    last = len(weights) - 1
    pre_out = None
    for li, (w, b) in enumerate(zip(weights, biases)):
        z = cur @ w.T
        z += b
        if li < last:
            np.maximum(z, 0.0, out=z)
            acts.append(z)
            cur = z
        else:
            pre_out = z
    if tanh_out:
        return np.tanh(pre_out), acts, pre_out
    return pre_out, acts, pre_out


def backward(weights, acts, y, dy, tanh_out, dz_extra, grad_weights, grad_biases):
    if tanh_out:
        dz = dy * (1.0 - y * y)
    else:
        dz = np.array(dy, dtype=np.float64, copy=True)
    if dz_extra is not None:
        dz += dz_extra
    for li in range(len(weights) - 1, -1, -1):
        a = acts[li]
        grad_biases[li][...] = dz.sum(axis=0)
        grad_weights[li][...] = dz.T @ a
        dx = dz @ weights[li]
        if li > 0:
            dx[a <= 0.0] = 0.0
        dz = dx
    return dz


def adam(params, grads, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def polyak(target, online, tau):
    target[...] = (1.0 - tau) * target + tau * online
