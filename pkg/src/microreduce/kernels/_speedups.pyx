# cython: boundscheck=False, wraparound=False
"""Compiled twins of the pure-Python row kernels.

Must stay observationally identical to ``pykernels``; the parity test
suite compares both backends on the same inputs.
"""

import math

BACKEND = "cython"


cdef inline object _fast_int(str text):
    """Parse an optionally signed decimal integer; None when not that shape."""
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = 0
    cdef long long value = 0
    cdef bint negative = False
    cdef Py_UCS4 ch
    if n == 0:
        return None
    ch = text[0]
    if ch == u'-' or ch == u'+':
        negative = ch == u'-'
        i = 1
        if n == 1:
            return None
    if n - i > 17:
        return None  # avoid overflow; caller falls back
    while i < n:
        ch = text[i]
        if ch < u'0' or ch > u'9':
            return None
        value = value * 10 + (<long long>ch - <long long>u'0')
        i += 1
    return -value if negative else value


cdef object _parse_delay(str raw):
    cdef str text = raw.strip()
    if not text:
        return None
    quick = _fast_int(text)
    if quick is not None:
        return quick
    # Mirror the pure-Python fallback exactly.
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return int(round(value))


cdef bint _is_cancelled(str raw):
    cdef str text = raw.strip()
    if not text or text == "0":
        return False
    try:
        return float(text) == 1.0
    except ValueError:
        return False


def scan_rows(rows, Py_ssize_t carrier_idx, Py_ssize_t delay_idx, Py_ssize_t cancelled_idx):
    """Filter raw field rows down to (carrier, delay) pairs.

    Returns ``(carriers, delays, total_rows, invalid_rows)`` where the two
    lists hold only the valid rows, aligned.
    """
    cdef Py_ssize_t need = max(carrier_idx, delay_idx, cancelled_idx)
    cdef list carriers = []
    cdef list delays = []
    cdef long long total = 0
    cdef long long invalid = 0
    cdef str carrier
    for row in rows:
        total += 1
        if len(row) <= need:
            invalid += 1
            continue
        carrier = (<str>row[carrier_idx]).strip()
        if not carrier:
            invalid += 1
            continue
        delay = _parse_delay(<str>row[delay_idx])
        if delay is None or _is_cancelled(<str>row[cancelled_idx]):
            invalid += 1
            continue
        carriers.append(carrier)
        delays.append(delay)
    return carriers, delays, total, invalid


def group_rows(carriers, delays):
    """Group aligned (carrier, delay) rows into per-carrier (sum, count)."""
    if len(carriers) != len(delays):
        raise ValueError("carriers and delays must be aligned")
    cdef dict acc = {}
    cdef Py_ssize_t i
    cdef Py_ssize_t n = len(carriers)
    cdef list cell
    for i in range(n):
        carrier = carriers[i]
        delay = delays[i]
        cell = <list>acc.get(carrier)
        if cell is None:
            acc[carrier] = [delay, 1]
        else:
            cell[0] = cell[0] + delay
            cell[1] = cell[1] + 1
    return {carrier: (cell[0], cell[1]) for carrier, cell in acc.items()}
