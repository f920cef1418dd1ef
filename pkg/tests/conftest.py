"""Independent oracles shared by the test modules.

Nothing here calls into the code paths it is used to check.
"""
import itertools
import math
from functools import lru_cache

import numpy as np
import pytest

from vistok.resize import ResizeSpec

DEFAULTS = ResizeSpec()


def ref_smart_resize(h, w, factor=28, min_pixels=DEFAULTS.min_pixels, max_pixels=DEFAULTS.max_pixels):
    """Float-arithmetic transcription of the rounding rules."""
    hb = math.floor(h / factor + 0.5) * factor
    wb = math.floor(w / factor + 0.5) * factor
    if hb * wb > max_pixels:
        beta = math.sqrt(max_pixels / (h * w))
        hb = math.floor(h * beta / factor) * factor
        wb = math.floor(w * beta / factor) * factor
    elif hb * wb < min_pixels:
        beta = math.sqrt(min_pixels / (h * w))
        hb = math.ceil(h * beta / factor) * factor
        wb = math.ceil(w * beta / factor) * factor
    return max(hb, factor), max(wb, factor)


@lru_cache(maxsize=None)
def aligned_log_aspects(min_cells, max_cells):
    """Sorted log(gh/gw) over every merged grid with cell count in [min_cells, max_cells]."""
    vals = []
    for gh in range(1, max_cells + 1):
        gw = np.arange(1, max_cells // gh + 1)
        gw = gw[gh * gw >= min_cells]
        vals.append(np.log(gh / gw))
    return np.sort(np.concatenate(vals))


def best_aspect_deviation(h, w, min_cells=100, max_cells=16384):
    logs = aligned_log_aspects(min_cells, max_cells)
    t = math.log(h / w)
    i = np.searchsorted(logs, t)
    cands = logs[max(i - 1, 0) : i + 1]
    return float(np.min(np.abs(cands - t)))


def optimal_bins(lengths, budget):
    """Exact minimum bin count by exhaustive assignment with symmetry breaking."""
    lengths = sorted(lengths, reverse=True)
    best = [len(lengths)]

    def go(i, loads):
        if len(loads) >= best[0]:
            return
        if i == len(lengths):
            best[0] = len(loads)
            return
        seen = set()
        for b in range(len(loads)):
            if loads[b] + lengths[i] <= budget and loads[b] not in seen:
                seen.add(loads[b])
                loads[b] += lengths[i]
                go(i + 1, loads)
                loads[b] -= lengths[i]
        loads.append(lengths[i])
        go(i + 1, loads)
        loads.pop()

    go(0, [])
    return best[0] if lengths else 0


def unpatchify(vecs, grid, tp=2, m=2, p=14, c=3):
    """Invert the token layout (t, merge_row, merge_col, channel, patch_row, patch_col)."""
    gt, gh, gw = grid
    out = np.zeros((gt * tp, gh * m * p, gw * m * p, c))
    n = 0
    for T in range(gt):
        for R in range(gh):
            for C in range(gw):
                v = vecs[n].reshape(tp, m, m, c, p, p)
                n += 1
                for t, mr, mc in itertools.product(range(tp), range(m), range(m)):
                    y = (R * m + mr) * p
                    x = (C * m + mc) * p
                    out[T * tp + t, y : y + p, x : x + p, :] = v[t, mr, mc].transpose(1, 2, 0)
    return out


def complex_rotate(v, angles):
    z = np.asarray(v[0::2]) + 1j * np.asarray(v[1::2])
    z = z * np.exp(1j * np.asarray(angles))
    out = np.empty(len(v))
    out[0::2], out[1::2] = z.real, z.imag
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
