# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, NAN

cnp.import_array()


def gae(rewards, values, dones, double last_value, double gamma, double lam):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.uint8_t[:] d = np.ascontiguousarray(dones, dtype=np.uint8)
    cdef Py_ssize_t n = r.shape[0]
    adv_arr = np.empty(n, dtype=np.float64)
    ret_arr = np.empty(n, dtype=np.float64)
    cdef double[:] adv = adv_arr
    cdef double[:] ret = ret_arr
    cdef double running = 0.0
    cdef double next_value, delta
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        if d[t]:
            next_value = 0.0
            running = 0.0
        elif t == n - 1:
            next_value = last_value
        else:
            next_value = v[t + 1]
        delta = r[t] + gamma * next_value - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        ret[t] = running + v[t]
    return adv_arr, ret_arr


def ewm(x, double alpha, Py_ssize_t start):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.full(n, np.nan, dtype=np.float64)
    if start >= n:
        return out_arr
    cdef double[:] out = out_arr
    cdef double prev = xv[start]
    cdef Py_ssize_t t
    out[start] = prev
    for t in range(start + 1, n):
        prev = alpha * xv[t] + (1.0 - alpha) * prev
        out[t] = prev
    return out_arr


def execute_trades(double cash, holdings, prices, actions, double hmax, double cost_rate):
    cdef const double[:] p = np.ascontiguousarray(prices, dtype=np.float64)
    cdef const double[:] a = np.ascontiguousarray(actions, dtype=np.float64)
    hold_arr = np.array(holdings, dtype=np.float64)
    cdef double[:] h = hold_arr
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i, j, k, key
    cdef double want, qty, notional, fee, unit, affordable
    cdef double cost_paid = 0.0
    for i in range(n):
        if a[i] < 0.0:
            want = floor(-a[i] * hmax + 0.5)
            qty = want if want < h[i] else h[i]
            if qty > 0.0:
                notional = qty * p[i]
                fee = notional * cost_rate
                cash = cash + (notional - fee)
                cost_paid += fee
                h[i] -= qty
    # stable insertion sort by descending action, matching sorted(key=-a)
    order_arr = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[:] order = order_arr
    for j in range(1, n):
        key = order[j]
        k = j - 1
        while k >= 0 and -a[order[k]] > -a[key]:
            order[k + 1] = order[k]
            k -= 1
        order[k + 1] = key
    for j in range(n):
        i = order[j]
        if a[i] > 0.0:
            want = floor(a[i] * hmax + 0.5)
            unit = p[i] * (1.0 + cost_rate)
            affordable = floor(cash / unit) if cash > 0.0 else 0.0
            qty = want if want < affordable else affordable
            while qty > 0.0:
                notional = qty * p[i]
                fee = notional * cost_rate
                if notional + fee <= cash:
                    break
                qty -= 1.0
            if qty > 0.0:
                cash = cash - (notional + fee)
                cost_paid += fee
                h[i] += qty
    return cash, hold_arr, cost_paid
