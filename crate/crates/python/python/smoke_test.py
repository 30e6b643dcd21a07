"""Smoke test for the precond_flow_py extension.

Run with the built extension on PYTHONPATH:
    PYTHONPATH=<dir containing precond_flow_py.so> python3 smoke_test.py
"""

import json
import math

import precond_flow_py as pf


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def check_potentials():
    for pid, params in [
        ("quadratic", {"a": 2.0}),
        ("eps-normalized", {"eps": 0.1}),
        ("cosh-clip", None),
        ("ball-moreau", None),
    ]:
        p = pf.Potential(pid, params)
        for y in ([0.3, -0.2], [3.0, 4.0], [-1e-3, 2.5]):
            g = p.grad_conjugate(y)
            fy = p.phi(g) + p.conjugate(y) - dot(g, y)
            assert abs(fy) <= 1e-9 * (1 + abs(p.conjugate(y))), (pid, y, fy)
    try:
        pf.Potential("huber")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown potential id accepted")


def check_flow_and_certificate():
    o = pf.Objective.quadratic([[1.0, 0.0], [0.0, 2.0]])
    p = pf.Potential("eps-normalized", {"eps": 0.5})
    assert o.f_star == 0.0 and o.minimizer == [0.0, 0.0]
    t = pf.integrate(o, p, [1.0, 1.0], 5.0, record_every=1e-4)
    assert t.terminal == "horizon-reached" and t.gamma is None
    f = [o.value(x) for x in t.states]
    assert all(b <= a for a, b in zip(f, f[1:]))
    report = json.loads(pf.certify(t, o, p))
    statuses = {e["claim"]: e["status"] for e in report["entries"]}
    assert statuses["decrease-identity"] == "pass", statuses
    assert all(s in ("pass", "not-applicable") for s in statuses.values()), statuses

    rk = pf.integrate(o, p, [1.0, 1.0], 5.0, method="rk4", step=1e-3, record_every=0.1)
    assert len(rk) == 51
    assert math.dist(rk.states[-1], t.states[-1]) < 1e-8

    try:
        pf.integrate(o, p, [1.0], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch accepted")


def check_discrete_and_duality():
    o = pf.Objective.quartic(2)
    p = pf.Potential("cosh-clip")
    run = pf.npgm(o, p, [1.0, -0.5], 0.5, k_max=5000, stop_grad=1e-4)
    assert run.gamma == 0.5
    assert math.hypot(*o.gradient(run.states[-1])) <= 1e-4
    entry = json.loads(pf.check_duality(o, p, [1.0, -0.5], tol=1e-7, newton_tol=1e-9))
    assert entry["status"] == "pass", entry
    assert o.bregman([1.0, 2.0], [0.5, -1.0]) >= 0.0


def check_control_value():
    o = pf.Objective.quadratic([[2.0, 0.5], [0.5, 1.0]], [1.0, 0.0])
    p = pf.Potential("quadratic")
    v = pf.closed_loop_value(o, p, [1.0, 1.0])
    assert v["tail_reliable"], v
    assert v["gap"] < 1e-4, v


if __name__ == "__main__":
    check_potentials()
    check_flow_and_certificate()
    check_discrete_and_duality()
    check_control_value()
    print("smoke test ok")
