"""Pure-numpy gated peephole-LSTM recurrence (forward and BPTT).

Shapes: ``zx`` (T, B, 4H) holds ``W_x x + b`` for gate blocks in the order
input, forget, candidate, output; ``j`` (T, B, H) is the event gate;
``w_h`` (4H, H) stacks the recurrent matrices in the same order.
"""

import numpy as np
from scipy.special import expit


def forward(zx, j, w_h, w_ic, w_fc, w_oc, keep=True):
    T, B, H4 = zx.shape
    H = H4 // 4
    cs = np.zeros((T + 1, B, H))
    hs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, H4)) if keep else None
    ctil = np.empty((T, B, H)) if keep else None
    htil = np.empty((T, B, H)) if keep else None
    w_hT = np.ascontiguousarray(w_h.T)
    for t in range(T):
        c, h, jt = cs[t], hs[t], j[t]
        z = zx[t] + h @ w_hT
        i = expit(z[:, :H] + w_ic * c)
        f = expit(z[:, H:2 * H] + w_fc * c)
        g = np.tanh(z[:, 2 * H:3 * H])
        o = expit(z[:, 3 * H:] + w_oc * c)
        ct = f * c + i * g
        ht = o * np.tanh(ct)
        cs[t + 1] = jt * ct + (1.0 - jt) * c
        hs[t + 1] = jt * ht + (1.0 - jt) * h
        if keep:
            gates[t, :, :H] = i
            gates[t, :, H:2 * H] = f
            gates[t, :, 2 * H:3 * H] = g
            gates[t, :, 3 * H:] = o
            ctil[t] = ct
            htil[t] = ht
    return cs, hs, gates, ctil, htil


def backward(dh_last, dc_last, j, w_h, w_ic, w_fc, w_oc, cs, hs, gates, ctil, htil):
    T, B, H4 = gates.shape
    H = H4 // 4
    dzx = np.empty((T, B, H4))
    dj = np.empty((T, B, H))
    dw_ic = np.zeros(H)
    dw_fc = np.zeros(H)
    dw_oc = np.zeros(H)
    dh = np.array(dh_last, dtype=np.float64, copy=True)
    dc = np.array(dc_last, dtype=np.float64, copy=True)
    for t in range(T - 1, -1, -1):
        c, h, jt = cs[t], hs[t], j[t]
        ct, ht = ctil[t], htil[t]
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        dj[t] = dc * (ct - c) + dh * (ht - h)
        dct = jt * dc
        dht = jt * dh
        keep = 1.0 - jt
        dc_prev = keep * dc
        dh_prev = keep * dh
        tc = np.tanh(ct)
        do = dht * tc
        dct = dct + dht * o * (1.0 - tc * tc)
        dzi = dct * g * i * (1.0 - i)
        dzf = dct * c * f * (1.0 - f)
        dzg = dct * i * (1.0 - g * g)
        dzo = do * o * (1.0 - o)
        dc_prev = dc_prev + dct * f + w_ic * dzi + w_fc * dzf + w_oc * dzo
        dw_ic += (dzi * c).sum(axis=0)
        dw_fc += (dzf * c).sum(axis=0)
        dw_oc += (dzo * c).sum(axis=0)
        dz = dzx[t]
        dz[:, :H] = dzi
        dz[:, H:2 * H] = dzf
        dz[:, 2 * H:3 * H] = dzg
        dz[:, 3 * H:] = dzo
        dh = dh_prev + dz @ w_h
        dc = dc_prev
    dw_h = dzx.reshape(T * B, H4).T @ hs[:T].reshape(T * B, H)
    return dzx, dj, dw_h, dw_ic, dw_fc, dw_oc, dh, dc


def _phase(times, tau, shift, r_on):
    x = times[:, None] - shift[None, :]
    phi = np.mod(x, tau) / tau
    rising = phi < 0.5 * r_on
    falling = ~rising & (phi < r_on)
    return x, phi, rising, falling


def phase_forward(times, tau, shift, r_on, alpha):
    """Phase gate ``k`` (rows x neurons) for event times ``times``."""
    _, phi, rising, falling = _phase(times, tau, shift, r_on)
    return np.where(rising, 2 * phi / r_on, np.where(falling, 2 - 2 * phi / r_on, alpha * phi))


def phase_backward(dk, times, tau, shift, r_on, alpha):
    """Gradients of ``sum(dk * k)`` w.r.t. ``tau``, ``shift`` and ``r_on``."""
    x, phi, rising, falling = _phase(times, tau, shift, r_on)
    dk_dphi = np.where(rising, 2 / r_on, np.where(falling, -2 / r_on, alpha))
    dk_dr = np.where(rising, -2 * phi / (r_on * r_on), np.where(falling, 2 * phi / (r_on * r_on), 0.0))
    dphi = dk * dk_dphi
    return (dphi * (-x / (tau * tau))).sum(axis=0), (dphi * (-1.0 / tau)).sum(axis=0), (dk * dk_dr).sum(axis=0)
