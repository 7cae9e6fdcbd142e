"""Pure-Python reference implementations of the hot loops.

``riskagent._kernels`` (Cython) mirrors these functions operation for
operation so both paths produce bit-identical floats.
"""
import math

import numpy as np


def gae(rewards, values, dones, last_value, gamma, lam):
    n = len(rewards)
    adv = np.empty(n, dtype=np.float64)
    ret = np.empty(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value = 0.0
            running = 0.0
        elif t == n - 1:
            next_value = float(last_value)
        else:
            next_value = float(values[t + 1])
        delta = float(rewards[t]) + gamma * next_value - float(values[t])
        running = delta + gamma * lam * running
        adv[t] = running
        ret[t] = running + float(values[t])
    return adv, ret


def ewm(x, alpha, start):
    """y[start] = x[start]; y[t] = alpha*x[t] + (1-alpha)*y[t-1]; NaN before start."""
    n = len(x)
    out = np.full(n, np.nan, dtype=np.float64)
    if start >= n:
        return out
    prev = float(x[start])
    out[start] = prev
    for t in range(start + 1, n):
        prev = alpha * float(x[t]) + (1.0 - alpha) * prev
        out[t] = prev
    return out


def execute_trades(cash, holdings, prices, actions, hmax, cost_rate):
    """Sell-then-buy execution of integer share orders.

    Sells run in index order; buys run from the largest intensity down,
    each capped by the cash left after earlier buys (cost included).
    Returns ``(new_cash, new_holdings, cost_paid)``.
    """
    n = len(prices)
    new_holdings = np.array(holdings, dtype=np.float64)
    cost_paid = 0.0
    for i in range(n):
        a = float(actions[i])
        if a < 0.0:
            want = float(math.floor(-a * hmax + 0.5))
            qty = min(want, float(new_holdings[i]))
            if qty > 0.0:
                notional = qty * float(prices[i])
                fee = notional * cost_rate
                cash = cash + (notional - fee)
                cost_paid += fee
                new_holdings[i] -= qty
    order = sorted(range(n), key=lambda i: -float(actions[i]))
    for i in order:
        a = float(actions[i])
        if a > 0.0:
            want = float(math.floor(a * hmax + 0.5))
            unit = float(prices[i]) * (1.0 + cost_rate)
            affordable = float(math.floor(cash / unit)) if cash > 0.0 else 0.0
            qty = min(want, affordable)
            # floor(cash/unit) can overshoot by one share under rounding
            while qty > 0.0:
                notional = qty * float(prices[i])
                fee = notional * cost_rate
                if notional + fee <= cash:
                    break
                qty -= 1.0
            if qty > 0.0:
                cash = cash - (notional + fee)
                cost_paid += fee
                new_holdings[i] += qty
    return cash, new_holdings, cost_paid
