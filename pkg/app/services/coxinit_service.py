"""
Cox proportional hazards fit without frailty: Newton-Raphson on the Breslow
partial likelihood. It provides the starting beta of the frailty fit and the
reference Breslow estimator that the frailty baseline reduces to.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.models.dataset import ClusteredDataset, StepFunction
from app.models.errors import ConfigError
from app.models.results import CoxFit

logger = logging.getLogger("frailty.coxinit")

MAX_HALVINGS = 10
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class RiskSets:
    """Time-ordered layout of a dataset shared by the partial likelihood sums."""

    order: np.ndarray
    sorted_time: np.ndarray
    tau: np.ndarray
    starts: np.ndarray
    fail_index: np.ndarray
    fail_tau: np.ndarray

    @classmethod
    def build(cls, data: ClusteredDataset) -> "RiskSets":
        order = np.argsort(data.time, kind="stable")
        sorted_time = data.time[order]
        fail_index = np.flatnonzero(data.status == 1)
        tau = np.unique(data.time[fail_index])
        return cls(
            order=order,
            sorted_time=sorted_time,
            tau=tau,
            starts=np.searchsorted(sorted_time, tau, side="left"),
            fail_index=fail_index,
            fail_tau=np.searchsorted(tau, data.time[fail_index]),
        )

    def at_risk_sums(self, values: np.ndarray) -> np.ndarray:
        """sum of values over {time >= tau_k} for every failure time, along axis 0."""
        sorted_values = values[self.order]
        tail = np.cumsum(sorted_values[::-1], axis=0)[::-1]
        return tail[self.starts]

    def failure_counts(self, weights: np.ndarray) -> np.ndarray:
        return np.bincount(self.fail_tau, weights=weights[self.fail_index], minlength=self.tau.size)


def observation_weights(data: ClusteredDataset, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.ones(data.n_obs)
    weights = np.asarray(weights, dtype=float)
    if weights.size != data.n_clusters:
        raise ConfigError(f"expected {data.n_clusters} cluster weights, got {weights.size}")
    return weights[data.cluster_codes]


class CoxInitService:
    @staticmethod
    def partial_likelihood(data: ClusteredDataset, beta, weights: Optional[np.ndarray] = None, risk: Optional[RiskSets] = None):
        """Log partial likelihood, score and information at beta (Breslow ties)."""
        risk = risk or RiskSets.build(data)
        w = observation_weights(data, weights)
        beta = np.asarray(beta, dtype=float)
        Z = data.covariates
        eta = Z @ beta
        shift = eta.max() if eta.size else 0.0
        r = w * np.exp(eta - shift)

        s0 = risk.at_risk_sums(r)
        s1 = risk.at_risk_sums(r[:, None] * Z)
        s2 = risk.at_risk_sums(r[:, None, None] * Z[:, :, None] * Z[:, None, :])
        d = risk.failure_counts(w)
        fails = risk.fail_index

        loglik = float(np.sum(w[fails] * eta[fails]) - np.sum(d * (np.log(s0) + shift)))
        mean_z = s1 / s0[:, None]
        score = (w[fails, None] * Z[fails]).sum(axis=0) - (d[:, None] * mean_z).sum(axis=0)
        info = np.einsum("k,kij->ij", d, s2 / s0[:, None, None] - mean_z[:, :, None] * mean_z[:, None, :])
        return loglik, score, info

    def cox_fit(
        self,
        data: ClusteredDataset,
        tol: float = 1e-9,
        max_iter: int = 50,
        weights: Optional[np.ndarray] = None,
    ) -> CoxFit:
        if data.n_failures < 1:
            raise ConfigError("Cox fit needs at least one failure")
        p = data.n_covariates
        beta = np.zeros(p)
        risk = RiskSets.build(data)
        loglik, score, info = self.partial_likelihood(data, beta, weights, risk)
        if p == 0:
            return CoxFit(beta=beta, loglik=loglik, iterations=0, converged=True, information=info)

        for iteration in range(1, max_iter + 1):
            if np.max(np.abs(score)) <= tol:
                return CoxFit(beta, loglik, iteration - 1, True, info)
            if np.linalg.matrix_rank(info) < p or np.linalg.cond(info) > SINGULAR_COND:
                logger.warning("Singular Cox information matrix; starting the frailty fit from beta = 0")
                return CoxFit(np.zeros(p), loglik, iteration - 1, False, info, singular=True)

            delta = np.linalg.solve(info, score)
            step = 1.0
            for _ in range(MAX_HALVINGS + 1):
                candidate = beta + step * delta
                new_loglik, new_score, new_info = self.partial_likelihood(data, candidate, weights, risk)
                if np.isfinite(new_loglik) and new_loglik >= loglik - 1e-12 * abs(loglik):
                    break
                step *= 0.5
            beta, loglik, score, info = candidate, new_loglik, new_score, new_info

        converged = bool(np.max(np.abs(score)) <= tol)
        if not converged:
            logger.warning(f"Cox fit did not converge after {max_iter} iterations")
        return CoxFit(beta, loglik, max_iter, converged, info)

    @staticmethod
    def breslow_baseline(data: ClusteredDataset, beta, weights: Optional[np.ndarray] = None) -> StepFunction:
        if data.n_failures == 0:
            return StepFunction.zero()
        risk = RiskSets.build(data)
        w = observation_weights(data, weights)
        r = w * np.exp(data.covariates @ np.asarray(beta, dtype=float))
        increments = risk.failure_counts(w) / risk.at_risk_sums(r)
        return StepFunction(risk.tau, np.cumsum(increments))


coxinit_service = CoxInitService()
