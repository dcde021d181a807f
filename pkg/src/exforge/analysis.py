"""Executable checks of the softmax calculus behind the attack.

Every ``verify_*`` function returns a JSON-ready report dict with a
``status`` of ``"pass"``, ``"fail"`` or ``"inconclusive"`` plus the
extremal witness values.  The convergence-dependent checks (Jacobian
similarity, gradient vanishing) are ``inconclusive`` when the training run
they depend on does not converge.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from . import jsonio
from .exceptions import ConfigurationError
from .losses import kl_loss, recover_logits
from .nn import Network, Optimizer, softmax, softmax_jacobian
from .rng import make_rng
from .validation import P_MIN, check_matrix
from .zo import true_input_grad

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@njit(cache=True)
def _jacobi_sweeps(A, tol, max_sweeps):
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += A[p, q] * A[p, q]
        if np.sqrt(off) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp, akq = A[k, p], A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk, aqk = A[p, k], A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
    return A


def jacobi_eigvalsh(A, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ConfigurationError("matrix must be symmetric")
    return np.sort(np.diag(_jacobi_sweeps(A, tol, max_sweeps)))


def _random_logits(rng, k: int) -> np.ndarray:
    # scales from nearly uniform to nearly one-hot
    return rng.normal(size=k) * np.exp(rng.uniform(np.log(0.1), np.log(10.0)))


def verify_lemma1(trials: int = 1000, k_range=(2, 16), seed: int = 0, tol: float = 1e-9) -> dict:
    """Softmax Jacobian spectrum lies in [0, 1] and its trace is ``1 - sum(S**2)``."""
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    rng = make_rng(seed)
    lo, hi = k_range
    violations = []
    min_eig, max_eig, max_trace_err = np.inf, -np.inf, 0.0
    for t in range(trials):
        k = lo + t % (hi - lo + 1)
        probs = softmax(_random_logits(rng, k))
        J = softmax_jacobian(probs)
        eig = jacobi_eigvalsh(J)
        trace_err = abs(np.trace(J) - (1.0 - np.sum(probs ** 2)))
        min_eig, max_eig = min(min_eig, eig[0]), max(max_eig, eig[-1])
        max_trace_err = max(max_trace_err, trace_err)
        if eig[0] < -tol or eig[-1] > 1.0 + tol or trace_err > tol:
            violations.append({"trial": t, "k": k, "eigenvalues": eig, "trace_error": trace_err})
    return {"check": "lemma1", "status": PASS if not violations else FAIL, "trials": trials,
            "violations": violations[:10], "n_violations": len(violations),
            "min_eigenvalue": min_eig, "max_eigenvalue": max_eig,
            "max_trace_error": max_trace_err}


def verify_lemma2(trials: int = 10_000, k_range=(2, 16), seed: int = 0, tol: float = 1e-9) -> dict:
    """``||J Z|| <= ||Z||`` for softmax Jacobians ``J`` and arbitrary ``Z``."""
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    rng = make_rng(seed)
    lo, hi = k_range
    violations = []
    max_ratio = 0.0
    for t in range(trials):
        k = lo + t % (hi - lo + 1)
        J = softmax_jacobian(softmax(_random_logits(rng, k)))
        z = rng.normal(size=k) * np.exp(rng.uniform(-5.0, 5.0))
        lhs, rhs = np.linalg.norm(J @ z), np.linalg.norm(z)
        max_ratio = max(max_ratio, lhs / rhs if rhs > 0 else 0.0)
        if lhs > rhs + tol:
            violations.append({"trial": t, "k": k, "lhs": lhs, "rhs": rhs})
    return {"check": "lemma2", "status": PASS if not violations else FAIL, "trials": trials,
            "violations": violations[:10], "n_violations": len(violations),
            "max_ratio": max_ratio}


def jacobian_gap_bound(p_victim, p_student) -> np.ndarray:
    """Entrywise bound on ``J_S - J_V`` from the probability gaps alone.

    With ``e = S - V``, the diagonal entries move by ``e_i (1 - 2 V_i) - e_i**2``
    and the off-diagonal ones by ``-(V_i e_j + V_j e_i + e_i e_j)``; the sum of
    the absolute terms dominates the Frobenius norm of the difference.
    """
    v = np.atleast_2d(p_victim)
    e = np.atleast_2d(p_student) - v
    a = np.abs(e)
    diag = (a * np.abs(1.0 - 2.0 * v) + e ** 2).sum(axis=1)
    full = (v[:, :, None] * a[:, None, :] + v[:, None, :] * a[:, :, None]
            + a[:, :, None] * a[:, None, :]).sum(axis=(1, 2))
    own = (2.0 * v * a + a * a).sum(axis=1)
    return diag + full - own


def jacobian_gap(p_victim, p_student) -> np.ndarray:
    """Per-row Frobenius norm of ``J_S - J_V``."""
    jv = softmax_jacobian(np.atleast_2d(p_victim))
    js = softmax_jacobian(np.atleast_2d(p_student))
    return np.linalg.norm(js - jv, axis=(-2, -1))


def _fit_toward(victim_net: Network, X, steps: int, seed: int, hidden=(64, 64), lr=0.01,
                checkpoints: int = 10):
    """White-box KL distillation on fixed inputs, yielding student snapshots.

    Full-batch Adam with step decay, so the tail of the run is smooth enough
    for trend checks on the checkpoints.
    """
    rng = make_rng(seed)
    student = Network.build([X.shape[1], *hidden, victim_net.output_dim], "relu", "identity",
                            rng)
    target = softmax(victim_net(X))
    opt = Optimizer("adam", lr, schedule=[(0.3, 0.3), (0.6, 0.3), (0.8, 0.3)],
                    total_steps=steps)
    every = max(steps // checkpoints, 1)
    yield 0, student.copy()
    for step in range(1, steps + 1):
        s, cache = student.forward(X)
        grads, _ = student.backward(cache, (softmax(s) - target) / len(X))
        opt.step(student, grads)
        if step % every == 0 or step == steps:
            yield step, student.copy()


def verify_lemma3(handle, X_probe, steps: int = 2000, seed: int = 0,
                  student: Network | None = None) -> dict:
    """Softmax Jacobians of a student converge to the victim's as ``S -> V``.

    Trains a fresh student toward the victim on ``X_probe`` (or evaluates the
    given ``student`` once), recording the mean Frobenius gap between the two
    Jacobians at each checkpoint.
    """
    victim = handle.diagnostic_network()
    X = check_matrix(X_probe, handle.n_features)
    pv = softmax(victim(X))
    if student is not None:
        snapshots = [(0, student)]
    else:
        snapshots = list(_fit_toward(victim, X, steps, seed))
    distances, bound_violations, kls = [], 0, []
    for _, s_net in snapshots:
        ps = softmax(s_net(X))
        gap = jacobian_gap(pv, ps)
        bound = jacobian_gap_bound(pv, ps)
        bound_violations += int(np.sum(gap > bound + 1e-12))
        distances.append(float(gap.mean()))
        kls.append(float(kl_loss(pv, ps).mean()))
    d = np.array(distances)
    decreasing = float(np.mean(np.diff(d) < 0)) if len(d) > 1 else 1.0
    report = {"check": "lemma3", "distances": distances, "kl": kls,
              "decreasing_fraction": decreasing, "bound_violations": bound_violations}
    if bound_violations:
        report["status"] = FAIL
    elif len(d) == 1:
        report["status"] = PASS if d[0] <= 1e-12 else INCONCLUSIVE
    elif kls[-1] > 0.1 * kls[0]:
        report["status"] = INCONCLUSIVE
    else:
        ok = d[-1] < 0.1 * d[0] and decreasing >= 0.8
        report["status"] = PASS if ok else FAIL
    return report


def _logit_input_jacobians(handle, student: Network, X):
    """Per-class input gradients of victim and student logits, shape (K, B, d)."""
    k = handle.n_classes
    eye = np.eye(k)
    jv, js = [], []
    s_logits, cache = student.forward(X)
    for i in range(k):
        up = np.broadcast_to(eye[i], (X.shape[0], k)).copy()
        jv.append(handle.diagnostic_true_input_grad(X, lambda logits, up=up: up))
        _, gx = student.backward(cache, up)
        js.append(gx)
    return np.array(jv), np.array(js)


def kl_gradient_bound(handle, student: Network, X) -> np.ndarray:
    """Per-row ``||sum_i delta_i (dv_i/dx - ds_i/dx)||`` with ``delta_i = V_i/S_i - 1``."""
    pv = softmax(handle.diagnostic_true_logits(X))
    ps = np.maximum(softmax(student(X)), P_MIN)
    delta = pv / ps - 1.0
    jv, js = _logit_input_jacobians(handle, student, X)
    combo = np.einsum("bk,kbd->bd", delta, jv - js)
    return np.linalg.norm(combo, axis=1)


def gradient_norm_ratio(handle, student: Network, X) -> dict:
    """Mean true input-gradient norms of both losses at ``X``, and their ratio."""
    g_kl = np.linalg.norm(true_input_grad(handle, student, X, "kl"), axis=1)
    g_l1 = np.linalg.norm(true_input_grad(handle, student, X, "l1"), axis=1)
    bound = kl_gradient_bound(handle, student, X)
    return {"grad_norm_kl": float(g_kl.mean()), "grad_norm_l1": float(g_l1.mean()),
            "ratio": float(g_kl.mean() / g_l1.mean()) if g_l1.mean() > 0 else 0.0,
            "bound_exceeded": int(np.sum(g_kl > bound + 1e-6)),
            "bound_slack_max": float(np.max(g_kl - bound))}


def hypothesis1_probe(handle, X_probe, students=None, steps: int = 2000, seed: int = 0,
                      threshold: float = 0.5) -> dict:
    """KL input gradients shrink relative to l1 ones as the student converges.

    ``students`` is a sequence of checkpoints along a converging run; when
    omitted, one is produced by white-box distillation on ``X_probe``.  The
    check passes when the final ratio is below ``threshold`` times the
    initial one.  The first-order KL bound is reported, not enforced.
    """
    X = check_matrix(X_probe, handle.n_features)
    if students is None:
        victim = handle.diagnostic_network()
        students = [s for _, s in _fit_toward(victim, X, steps, seed)]
    if len(students) < 2:
        raise ConfigurationError("need at least two checkpoints")
    pv = softmax(handle.diagnostic_true_logits(X))
    points = []
    for s_net in students:
        row = gradient_norm_ratio(handle, s_net, X)
        row["kl"] = float(kl_loss(pv, softmax(s_net(X))).mean())
        points.append(row)
    first, last = points[0], points[-1]
    report = {"check": "hypothesis1", "checkpoints": points, "threshold": threshold,
              "initial_ratio": first["ratio"], "final_ratio": last["ratio"]}
    if last["kl"] > 0.5 * first["kl"]:
        report["status"] = INCONCLUSIVE
    else:
        report["status"] = PASS if last["ratio"] < threshold * first["ratio"] else FAIL
    return report


def hypothesis1_from_metrics(records, threshold: float = 0.5) -> dict:
    """The same ratio test on an attack's diagnostic metric timeline."""
    rows = [r for r in records if np.isfinite(r.grad_norm_kl) and np.isfinite(r.grad_norm_l1)]
    if len(rows) < 2:
        return {"check": "hypothesis1", "status": INCONCLUSIVE,
                "detail": "run recorded no gradient diagnostics"}
    ratios = [r.grad_norm_kl / r.grad_norm_l1 for r in rows]
    report = {"check": "hypothesis1", "ratios": ratios, "queries": [r.queries_used for r in rows],
              "initial_ratio": ratios[0], "final_ratio": ratios[-1], "threshold": threshold}
    if rows[-1].fidelity <= rows[0].fidelity:
        report["status"] = INCONCLUSIVE
    else:
        report["status"] = PASS if ratios[-1] < threshold * ratios[0] else FAIL
    return report


def logit_error_row(handle, X, name: str = "victim", tol: float = 1e-9) -> dict:
    """Logit reconstruction errors for one victim on inputs ``X``.

    Mean correction leaves every row off by exactly minus its logit mean, so
    the per-example error equals that example's absolute mean true logit.
    """
    X = check_matrix(X, handle.n_features)
    v = handle.diagnostic_true_logits(X)
    probs = handle.query(X, "evaluation")
    row_mean = v.mean(axis=1)
    err_mc = np.abs(recover_logits(probs) - v).mean(axis=1)
    err_lp = np.abs(np.log(np.maximum(probs, P_MIN)) - v).mean(axis=1)
    identity_err = float(np.max(np.abs(err_mc - np.abs(row_mean))))
    mae_mc, mae_lp = float(err_mc.mean()), float(err_lp.mean())
    ok = identity_err <= tol and mae_mc < 0.01 * mae_lp
    return {"victim": name, "mtl": float(row_mean.mean()), "mean_abs_row_mean":
            float(np.abs(row_mean).mean()), "mae_mc": mae_mc, "mae_lp": mae_lp,
            "identity_error": identity_err, "status": PASS if ok else FAIL}


def logit_error_study(victims, tol: float = 1e-9) -> dict:
    """``victims`` is a list of ``(name, handle, X)`` triples."""
    if not victims:
        raise ConfigurationError("need at least one victim")
    rows = [logit_error_row(h, X, name, tol) for name, h, X in victims]
    return {"check": "logits", "rows": rows,
            "status": PASS if all(r["status"] == PASS for r in rows) else FAIL}


def write_report(report: dict, path) -> None:
    jsonio.dump(report, path)
