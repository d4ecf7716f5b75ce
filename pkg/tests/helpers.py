"""Independent oracles shared by several test modules."""

import math

import numpy as np


def straight_line_logits(weights, X, relu=True):
    """Per-instance scalar loops, no matrix products."""
    Wp, bp = weights["proj.weight"], weights["proj.bias"]
    V, bV = weights["attn_v.weight"], weights["attn_v.bias"]
    U, bU = weights["attn_u.weight"], weights["attn_u.bias"]
    wa, ba = weights["attn_w.weight"][0], weights["attn_w.bias"][0]
    Wq, bq = weights["pred.weight"], weights["pred.bias"]
    H = []
    for x in X:
        h = []
        for k in range(Wp.shape[0]):
            z = bp[k] + sum(Wp[k, i] * x[i] for i in range(len(x)))
            h.append(max(z, 0.0) if relu else z)
        H.append(h)
    scores = []
    for h in H:
        e = ba
        for a in range(V.shape[0]):
            tv = math.tanh(bV[a] + sum(V[a, k] * h[k] for k in range(len(h))))
            gu = 1.0 / (1.0 + math.exp(-(bU[a] + sum(U[a, k] * h[k] for k in range(len(h))))))
            e += wa[a] * tv * gu
        scores.append(e)
    mx = max(scores)
    ex = [math.exp(s - mx) for s in scores]
    A = [v / sum(ex) for v in ex]
    hbag = [sum(A[m] * H[m][k] for m in range(len(H))) for k in range(len(H[0]))]
    return np.array([bq[o] + sum(Wq[o, k] * hbag[k] for k in range(len(hbag))) for o in range(Wq.shape[0])])


def central_difference(f, weights, h=1e-5):
    """Finite-difference gradient of scalar ``f(weights)`` for every entry of every tensor."""
    grads = {}
    for name, w in weights.items():
        g = np.zeros_like(w)
        flat, gflat = w.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(weights)
            flat[i] = orig - h
            fm = f(weights)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def brute_cindex(risks, times, censorship):
    conc = comp = 0.0
    n = len(risks)
    for i in range(n):
        for j in range(n):
            if censorship[i] == 0 and times[i] < times[j]:
                comp += 1
                if risks[i] > risks[j]:
                    conc += 1
                elif risks[i] == risks[j]:
                    conc += 0.5
    return conc / comp


def brute_logrank(times, censorship, group):
    """Per-event-time O/E/V table with plain loops."""
    event_times = sorted({t for t, c in zip(times, censorship) if c == 0})
    o_minus_e = var = 0.0
    for t in event_times:
        n = sum(1 for u in times if u >= t)
        n1 = sum(1 for u, g in zip(times, group) if u >= t and g == 1)
        d = sum(1 for u, c in zip(times, censorship) if u == t and c == 0)
        d1 = sum(1 for u, c, g in zip(times, censorship, group) if u == t and c == 0 and g == 1)
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return o_minus_e**2 / var
