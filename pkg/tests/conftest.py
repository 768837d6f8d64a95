import numpy as np
import pytest
from scipy.integrate import dblquad

from countkrige import Rect, Window


@pytest.fixture
def unit_window():
    return Window(Rect(0.0, 0.0, 1.0, 1.0))


@pytest.fixture
def holed_window():
    return Window(Rect(0.0, 0.0, 1.0, 1.0), [Rect(0.25, 0.25, 0.5, 0.5)])


def rect_pair_excess(pcf, rect_b, rect_d, epsabs=1e-10):
    """Independent quadrature oracle for the pair integral of g - 1.

    Reduces the four-dimensional integral of g(x - y) - 1 over B x D to a
    two-dimensional one over the displacement w, weighted by the overlap
    lengths of the shifted coordinate intervals, and integrates that
    adaptively.
    """

    def overlap(lo_a, hi_a, lo_b, hi_b, w):
        return max(0.0, min(hi_a, hi_b + w) - max(lo_a, lo_b + w))

    def integrand(wy, wx):
        lx = overlap(rect_b.xmin, rect_b.xmax, rect_d.xmin, rect_d.xmax, wx)
        ly = overlap(rect_b.ymin, rect_b.ymax, rect_d.ymin, rect_d.ymax, wy)
        if lx == 0.0 or ly == 0.0:
            return 0.0
        return (pcf(float(np.hypot(wx, wy))) - 1.0) * lx * ly

    wx_lo = rect_b.xmin - rect_d.xmax
    wx_hi = rect_b.xmax - rect_d.xmin
    wy_lo = rect_b.ymin - rect_d.ymax
    wy_hi = rect_b.ymax - rect_d.ymin
    value, _ = dblquad(
        integrand, wx_lo, wx_hi, wy_lo, wy_hi, epsabs=epsabs, epsrel=1e-9
    )
    return value
