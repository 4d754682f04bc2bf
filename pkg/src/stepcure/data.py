"""Subject-level data containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: observed time, event flag, covariate vector with leading 1."""

    time: float
    event: bool
    z: tuple[float, ...] = (1.0,)


@dataclass
class Dataset:
    """Columnar view of the study data.

    ``covariates`` is (n, s) without the leading intercept column; use
    :meth:`design_matrix` where the leading 1 is needed.
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray = field(default=None)
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.events = np.asarray(self.events, dtype=bool)
        if self.covariates is None:
            self.covariates = np.empty((self.times.shape[0], 0))
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        self.covariate_names = tuple(self.covariate_names)
        n = self.times.shape[0]
        if self.events.shape[0] != n or self.covariates.shape[0] != n:
            raise DataError("times, events, and covariates must have equal length")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise DataError(
                f"{self.covariates.shape[1]} covariate columns but "
                f"{len(self.covariate_names)} names"
            )
        if n == 0:
            raise DataError("dataset is empty")
        if not np.all(self.times > 0.0):
            raise DataError("all times must be positive")
        if not np.all(np.isfinite(self.covariates)):
            raise DataError("all covariates must be finite")

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def s(self) -> int:
        return self.covariates.shape[1]

    def design_matrix(self) -> np.ndarray:
        """(n, s+1) matrix with a leading column of ones."""
        return np.hstack([np.ones((self.n, 1)), self.covariates])

    def drop_covariates(self) -> "Dataset":
        """The same subjects with no covariate columns."""
        return Dataset(self.times.copy(), self.events.copy())

    def scaled_times(self, c: float) -> "Dataset":
        """The same subjects with times divided by c."""
        return Dataset(self.times / c, self.events.copy(),
                       self.covariates.copy(), self.covariate_names)

    def records(self) -> list[SubjectRecord]:
        z = self.design_matrix()
        return [SubjectRecord(float(t), bool(e), tuple(row))
                for t, e, row in zip(self.times, self.events, z)]

    @classmethod
    def from_records(cls, records: list[SubjectRecord],
                     covariate_names: tuple[str, ...] = ()) -> "Dataset":
        times = [r.time for r in records]
        events = [r.event for r in records]
        covs = [r.z[1:] for r in records]
        return cls(np.asarray(times), np.asarray(events), np.asarray(covs),
                   covariate_names or tuple(f"z{i+1}" for i in range(len(records[0].z) - 1)))
