"""Finite age measures of the infected population."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AgeMeasure:
    """Unit-weight point measure ``sum_i delta_{a_i}`` over infection ages.

    Atoms are kept sorted by (age, id). ``hazard`` is the recovery hazard ``h``
    used by :meth:`total_hazard` and :meth:`h_biased_inverse`.
    """

    def __init__(self, ages=(), ids=None, hazard=None):
        ages = np.asarray(ages, dtype=float).reshape(-1)
        ids = np.arange(len(ages)) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
        if ages.shape != ids.shape:
            raise ValueError("ages and ids must have the same length")
        if np.any(ages < 0):
            raise ValueError("ages must be non-negative")
        order = np.lexsort((ids, ages))
        self.ages = ages[order]
        self.ids = ids[order]
        self.hazard = hazard
        self._cum = None

    def __len__(self):
        return len(self.ages)

    def __repr__(self):
        return f"AgeMeasure(n={len(self)})"

    def apply(self, phi):
        """``<nu, phi> = sum_i phi(a_i)``."""
        if len(self.ages) == 0:
            return 0.0
        return float(np.sum(np.asarray(phi(self.ages), dtype=float) * np.ones_like(self.ages)))

    def _hazard_cdf(self):
        if self._cum is None:
            if self.hazard is None:
                raise ValueError("no hazard attached to this measure")
            h = np.asarray(self.hazard(self.ages), dtype=float) * np.ones_like(self.ages)
            self._cum = np.cumsum(h)
        return self._cum

    def total_hazard(self):
        """``nu(h)``."""
        if len(self.ages) == 0:
            return 0.0
        return float(self._hazard_cdf()[-1])

    def hazard_cdf(self):
        """``G(a_i) = nu(h 1_[0, a_i]) / nu(h)`` at every atom, in storage order."""
        cum = self._hazard_cdf()
        return cum / cum[-1]

    def h_biased_inverse(self, w, return_id=False):
        """Smallest atom ``a`` (in (age, id) order) with ``w <= G(a)``.

        For ``w ~ Uniform(0, 1)`` atom ``a_i`` is selected with probability
        ``h(a_i) / nu(h)``.
        """
        if len(self.ages) == 0:
            raise ValueError("h-biased inverse of an empty measure")
        if not 0.0 <= w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        if self.total_hazard() <= 0.0:
            raise ValueError("nu(h) = 0: no atom can recover")
        cum = self._hazard_cdf()
        idx = int(np.searchsorted(cum / cum[-1], w, side="left"))
        # atoms with zero hazard are never selected, even at w = 0
        live = np.flatnonzero(np.diff(np.concatenate([[0.0], cum])) > 0)
        idx = int(live[min(np.searchsorted(live, idx), len(live) - 1)])
        if return_id:
            return float(self.ages[idx]), int(self.ids[idx])
        return float(self.ages[idx])

    def advance(self, delta):
        """Measure after every atom has aged by ``delta``."""
        return AgeMeasure(self.ages + delta, self.ids, self.hazard)

    def add(self, age, ident):
        return AgeMeasure(np.append(self.ages, age), np.append(self.ids, ident), self.hazard)

    def remove(self, ident):
        keep = self.ids != ident
        if keep.all():
            raise KeyError(ident)
        return AgeMeasure(self.ages[keep], self.ids[keep], self.hazard)


def measure_apply(nu, phi):
    return nu.apply(phi)


def h_biased_inverse(nu, w):
    return nu.h_biased_inverse(w)


@dataclass
class PopulationState:
    """Counts, age measure and infection times of a population at clock ``t``."""

    N: int
    S: int
    I: int
    R: int
    measure: AgeMeasure
    t: float = 0.0
    infection_times: dict = field(default_factory=dict)

    def check(self):
        if min(self.S, self.I, self.R) < 0 or self.S + self.I + self.R != self.N:
            raise AssertionError("counts must be non-negative and sum to N")
        if self.I != len(self.measure):
            raise AssertionError("I must equal the number of atoms")
