"""Independent reference implementations used as test oracles.

Each function is written from the textbook definition with plain loops and
shares no code with the package under test.
"""
import math


def gae_loop(rewards, values, last_value, gamma, lam):
    n = len(rewards)
    adv = [0.0] * n
    for t in range(n):
        # direct (non-recursive) sum of discounted TD errors
        total = 0.0
        for k in range(t, n):
            v_next = values[k + 1] if k + 1 < n else last_value
            delta = rewards[k] + gamma * v_next - values[k]
            total += (gamma * lam) ** (k - t) * delta
        adv[t] = total
    return adv, [a + v for a, v in zip(adv, values)]


def cvar_penalty_loop(ds, eta, alpha, beta):
    acc = 0.0
    for d in ds:
        if eta - d > 0:
            acc += eta - d
    return acc / len(ds) / (1.0 - alpha) - eta + beta


def mean_std_two_pass(xs):
    n = len(xs)
    m = 0.0
    for x in xs:
        m += x
    m /= n
    ss = 0.0
    for x in xs:
        ss += (x - m) ** 2
    return m, math.sqrt(ss / (n - 1))


def information_ratio_oracle(r, b):
    ex = [x - y for x, y in zip(r, b)]
    m, s = mean_std_two_pass(ex)
    return m / s


def tail_count(fraction, n):
    k = 1
    while k < n and k < fraction * n - 1e-9:
        k += 1
    return k


def cvar_oracle(r, alpha):
    s = sorted(r)
    k = tail_count(alpha, len(s))
    return sum(s[:k]) / k


def rachev_oracle(r, tail):
    s = sorted(r)
    k = tail_count(tail, len(s))
    worst = sum(s[:k]) / k
    best = sum(sorted(r, reverse=True)[:k]) / k
    return best / abs(worst)


def wilder_rsi(close, n=14):
    """RSI at every index >= n, textbook Wilder smoothing."""
    gains, losses = [], []
    for t in range(1, len(close)):
        ch = close[t] - close[t - 1]
        gains.append(max(ch, 0.0))
        losses.append(max(-ch, 0.0))
    out = {}
    ag = sum(gains[:n]) / n
    al = sum(losses[:n]) / n

    def rsi(ag, al):
        if ag == 0 and al == 0:
            return 50.0
        if al == 0:
            return 100.0
        return 100.0 - 100.0 / (1.0 + ag / al)

    out[n] = rsi(ag, al)
    for t in range(n + 1, len(close)):
        ag = (ag * (n - 1) + gains[t - 1]) / n
        al = (al * (n - 1) + losses[t - 1]) / n
        out[t] = rsi(ag, al)
    return out


def gaussian_density(x, mu, sigma):
    p = 1.0
    for xi, mi, si in zip(x, mu, sigma):
        p *= math.exp(-0.5 * ((xi - mi) / si) ** 2) / (si * math.sqrt(2 * math.pi))
    return p


def dot(a, b):
    acc = 0.0
    for x, y in zip(a, b):
        acc += x * y
    return acc
