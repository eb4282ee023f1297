"""Spike variations and the order estimates behind the optimality argument.

A spike replaces the control on a short window [t0, t0 + eps) and the
perturbed state is rerun with the identical noise path, so the pathwise
differences isolate the control effect.  The studies here fit the growth
orders in eps of

    xi  = X_spiked - X          (first-order response, O(eps)),
    Y   = solution of the linearized equation forced by the drift mismatch,
    eta = xi - Y                (what linearization misses, o(eps)),

and of the cost-expansion remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import ControlProblem, cost_of_ensemble, trapezoid_weights
from .errors import ConfigurationError, GridError
from .forward import (ControlProcess, EnsembleStates, StateTrajectory,
                      linearized_modes, simulate_auxiliary, simulate_ensemble)
from .noise import convolution_increments
from .spectral import SpectralDomain


@dataclass(frozen=True)
class SpikeConfig:
    """Replacement window [t0, t0 + epsilon) with control value w.

    Both endpoints must be grid-aligned and the closed window must stay
    strictly inside (0, T).
    """

    t0: float
    epsilon: float
    w: float


def _spike_steps(spike: SpikeConfig, dt: float, n_steps: int) -> tuple[int, int]:
    start = spike.t0 / dt
    width = spike.epsilon / dt
    if abs(start - round(start)) > 1e-9 or abs(width - round(width)) > 1e-9:
        raise GridError(f"spike [{spike.t0}, {spike.t0 + spike.epsilon}] is not aligned "
                        f"with the step dt={dt}")
    start, width = int(round(start)), int(round(width))
    if width < 1:
        raise GridError("spike must cover at least one step")
    if start < 1 or start + width >= n_steps:
        raise GridError("spike window must sit strictly inside (0, T)")
    return start, width


def spike_perturb(control: ControlProcess, spike: SpikeConfig, horizon: float) -> ControlProcess:
    """Control equal to w on the spike window and unchanged elsewhere."""
    n_steps = len(control)
    start, width = _spike_steps(spike, horizon / n_steps, n_steps)
    values = control.values.copy()
    values[start:start + width] = spike.w
    return ControlProcess(values=values, space=control.space)


def _mismatch_gamma_fn(domain: SpectralDomain, drift, control: ControlProcess,
                       spiked: ControlProcess):
    """Forcing delta F_t = F(X_t, u^eps_t) - F(X_t, u_t), zero off the spike."""

    def gamma_fn(n, base_modes):
        if spiked.values[n] == control.values[n]:
            return np.zeros_like(base_modes)
        fields = domain.to_field(base_modes)
        diff = drift.f(fields, spiked.values[n]) - drift.f(fields, control.values[n])
        return domain.to_coeffs(diff)

    return gamma_fn


def first_variation(domain: SpectralDomain, drift, base: StateTrajectory,
                    spike: SpikeConfig) -> StateTrajectory:
    """Linearized response Y to the spike's drift mismatch along ``base``."""
    control = base.control
    spiked = spike_perturb(control, spike, float(base.times[-1]))
    gamma_fn = _mismatch_gamma_fn(domain, drift, control, spiked)
    normals = base.normals[None] if base.normals is not None else None
    coeffs = linearized_modes(domain, drift, base.mode_coeffs[None], normals,
                              control.values, base.dt, gamma_fn=gamma_fn)[0]
    return StateTrajectory(domain=domain, times=base.times, mode_coeffs=coeffs,
                           control=control, path_seed=base.path_seed,
                           normals=base.normals)


def first_variation_ensemble(domain: SpectralDomain, drift, base: EnsembleStates,
                             spike: SpikeConfig) -> np.ndarray:
    spiked = spike_perturb(base.control, spike, float(base.times[-1]))
    gamma_fn = _mismatch_gamma_fn(domain, drift, base.control, spiked)
    return linearized_modes(domain, drift, base.modes, base.normals,
                            base.control.values, base.dt, gamma_fn=gamma_fn)


def fit_loglog(epsilons, estimates, stderrs=None, drop_rel_stderr: float = 0.25):
    """Least-squares slope of log(estimate) vs log(epsilon).

    The smallest epsilon is dropped when its Monte Carlo relative standard
    error exceeds ``drop_rel_stderr`` (variance dominates bias there).
    """
    eps = np.asarray(epsilons, dtype=float)
    vals = np.asarray(estimates, dtype=float)
    keep = np.ones(eps.size, dtype=bool)
    if stderrs is not None and eps.size > 2:
        smallest = int(np.argmin(eps))
        if vals[smallest] <= 0 or stderrs[smallest] / max(vals[smallest], 1e-300) > drop_rel_stderr:
            keep[smallest] = False
    if np.any(vals[keep] <= 0):
        return {"slope": float("nan"), "intercept": float("nan"), "stderr": float("nan"),
                "used": int(keep.sum())}
    x, y = np.log(eps[keep]), np.log(vals[keep])
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return {"slope": float(slope), "intercept": float(y[0] - slope * x[0]),
                "stderr": float("nan"), "used": 2}
    coeffs, cov = np.polyfit(x, y, 1, cov=True)
    return {"slope": float(coeffs[0]), "intercept": float(coeffs[1]),
            "stderr": float(np.sqrt(cov[0, 0])), "used": int(keep.sum())}


def spike_order_study(problem: ControlProblem, control: ControlProcess,
                      w: float, t0: float, epsilons, n_paths: int = 200,
                      seed=None) -> dict:
    """Fit the eps-orders of sup-norm second moments of (xi, Y, eta).

    Every epsilon reruns the same noise paths; expected slopes are about 2
    for xi and Y and strictly larger for eta.
    """
    epsilons = sorted(float(e) for e in epsilons)
    if len(epsilons) < 3:
        raise ConfigurationError("need at least three epsilons to fit an order")
    seed = seed if seed is not None else problem.noise.seed
    domain = problem.domain
    n_steps = len(control)
    base = simulate_ensemble(domain, problem.drift, problem.noise, control, problem.x0,
                             n_steps, problem.horizon, n_paths, seed)
    dt = base.dt

    rows = []
    sup2 = {}
    for eps in epsilons:
        spike = SpikeConfig(t0=t0, epsilon=eps, w=w)
        spiked_control = spike_perturb(control, spike, problem.horizon)
        incr = convolution_increments(domain, problem.noise, base.normals, dt)
        perturbed = _reuse_noise_ensemble(problem, spiked_control, base, incr)
        y_modes = first_variation_ensemble(domain, problem.drift, base, spike)

        xi = perturbed.modes - base.modes
        eta = xi - y_modes
        for label, arr in (("xi", xi), ("Y", y_modes), ("eta", eta)):
            sup_t = np.max(domain.sup_norm(arr), axis=1) ** 2     # per path
            est = float(sup_t.mean())
            se = float(sup_t.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
            rows.append({"epsilon": eps, "quantity": label, "estimate": est, "stderr": se})
            sup2.setdefault(label, []).append((est, se))

    slopes = {}
    for label, pairs in sup2.items():
        est = [p[0] for p in pairs]
        se = [p[1] for p in pairs]
        slopes[label] = fit_loglog(epsilons, est, se)
    return {"rows": rows, "slopes": slopes, "epsilons": epsilons,
            "n_paths": n_paths, "t0": t0, "w": w}


def _reuse_noise_ensemble(problem: ControlProblem, control: ControlProcess,
                          base: EnsembleStates, increments: np.ndarray) -> EnsembleStates:
    """Resimulate the ensemble under another control with identical noise."""
    from .forward import _step_weights  # same integrator internals

    domain, drift = problem.domain, problem.drift
    n_paths, n_plus, n_modes = base.modes.shape
    n_steps = n_plus - 1
    decay, wdrift = _step_weights(domain, base.dt)
    modes = np.empty_like(base.modes)
    state = base.modes[:, 0].copy()
    modes[:, 0] = state
    for n in range(n_steps):
        field = domain.to_field(state)
        reaction = domain.to_coeffs(drift.f(field, control.values[n]))
        state = decay * state + wdrift * reaction + increments[:, n]
        modes[:, n + 1] = state
    return EnsembleStates(domain=domain, times=base.times, modes=modes,
                          normals=base.normals, control=control, root_seed=base.root_seed)


def cost_expansion_check(problem: ControlProblem, control: ControlProcess,
                         w: float, t0: float, epsilons, n_paths: int = 200,
                         seed=None) -> dict:
    """Remainder of the first-order cost expansion across spike widths.

    R(eps) = |J(u^eps) - J(u) - first-order term| with the first-order term
    E int [delta L + D_x L . Y] dt + E[D_x G(X_T) Y_T], all under common
    random numbers; its log-log slope should exceed 1.
    """
    epsilons = sorted(float(e) for e in epsilons)
    if len(epsilons) < 3:
        raise ConfigurationError("need at least three epsilons to fit an order")
    seed = seed if seed is not None else problem.noise.seed
    domain, cost = problem.domain, problem.cost
    n_steps = len(control)
    base = simulate_ensemble(domain, problem.drift, problem.noise, control, problem.x0,
                             n_steps, problem.horizon, n_paths, seed)
    dt = base.dt
    incr = convolution_increments(domain, problem.noise, base.normals, dt)
    j_base = cost_of_ensemble(problem, base)
    wq = trapezoid_weights(n_steps, dt)

    rows = []
    for eps in epsilons:
        spike = SpikeConfig(t0=t0, epsilon=eps, w=w)
        spiked_control = spike_perturb(control, spike, problem.horizon)
        perturbed = _reuse_noise_ensemble(problem, spiked_control, base, incr)
        j_spiked = cost_of_ensemble(problem, perturbed)
        delta_j = float((j_spiked - j_base).mean())

        y_modes = first_variation_ensemble(domain, problem.drift, base, spike)
        first_order = np.zeros(base.n_paths)
        for n in range(n_steps + 1):
            u_n = control.values[min(n, n_steps - 1)]
            ue_n = spiked_control.values[min(n, n_steps - 1)]
            if ue_n != u_n:
                first_order += wq[n] * (
                    cost.running_value(domain, base.times[n], base.modes[:, n], ue_n)
                    - cost.running_value(domain, base.times[n], base.modes[:, n], u_n))
            dl = cost.running_gradient_coeffs(domain, base.times[n], base.modes[:, n], u_n)
            first_order += wq[n] * np.sum(dl * y_modes[:, n], axis=1)
        dg = cost.terminal_gradient_coeffs(domain, base.modes[:, -1])
        first_order += np.sum(dg * y_modes[:, -1], axis=1)

        residual = abs(delta_j - float(first_order.mean()))
        rows.append({"epsilon": eps, "delta_j": delta_j,
                     "first_order": float(first_order.mean()), "residual": residual})

    fit = fit_loglog(epsilons, [r["residual"] for r in rows])
    return {"rows": rows, "slope": fit, "epsilons": epsilons, "n_paths": n_paths}
