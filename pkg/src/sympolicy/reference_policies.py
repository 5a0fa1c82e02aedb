"""Best published policies per experiment, written in this package's grammar.

Observation slots are ``y1..yM`` in the order of the experiment's observation
matrix.  For the reactor ``y1 = T_r`` and ``y2 = T_c`` and ``xstar`` is the
temperature setpoint.  State equations are listed as ``daK`` lines.
"""

from __future__ import annotations

from .environments import get_experiment
from .policies import DynamicPolicy, PolicyShape, StaticPolicy

REFERENCE_POLICIES: dict[tuple[str, str], dict[str, list[str]]] = {
    ("sho-noise", "static"): {"u": ["-0.61*y2 + xstar"]},
    ("sho-noise", "dynamic"): {
        "u": ["-2*a1 + 2.60*a2 + xstar"],
        "da": ["y2", "-u + xstar"],
    },
    ("sho-partial", "static"): {"u": ["0.75*xstar - 0.11"]},
    ("sho-partial", "dynamic"): {
        "u": ["0.45*(a1 + xstar)"],
        "da": ["2*a2 - u + xstar", "-a2 - 0.99*u + y1"],
    },
    ("sho-varying", "static"): {"u": ["-1.10*y1 - 0.73*y2 + 1.83*xstar + 0.17"]},
    ("sho-varying", "dynamic"): {
        "u": ["-a1^3 - a2 + xstar"],
        "da": ["27.76*(-a1 + y1 + y2 - xstar)", "0.32*a1"],
    },
    ("acrobot-noise", "static"): {"u": ["-y3 + 1.29*sin(y4)"]},
    ("acrobot-noise", "dynamic"): {
        "u": ["2*a2 - cos(2*a1)"],
        "da": ["2*y1 - 2*y2", "5.47*sin(sin(y1))"],
    },
    ("acrobot-partial", "dynamic"): {
        "u": ["1.87*a1 + cos(a2)"],
        "da": ["2.06*y1", "y1 - 2.68"],
    },
    ("acrobot-two-u", "static"): {"u": ["0.64*y4 + sin(y4) - 0.04", "sin(0.37*y3)"]},
    ("acrobot-two-u", "dynamic"): {
        "u": ["2.71*cos(a2 - 0.57)", "-a2 - 1.48"],
        "da": ["-8.66*a1 + y4", "-3.44*y2", "y3"],
    },
    ("cstr", "static"): {"u": ["y2^4 * xstar^(-3) - y1"]},
    ("cstr", "dynamic"): {
        "u": ["a1^2*a2 + 2*a1*log(xstar)"],
        "da": ["(2.92 - a1)*(u + 2.98)", "(u - a2 + 2.37)*(a2 - xstar + y1)"],
    },
}


def reference_policy(experiment: str, kind: str) -> StaticPolicy | DynamicPolicy:
    entry = REFERENCE_POLICIES[(experiment, kind)]
    shape = PolicyShape.of(get_experiment(experiment))
    if kind == "static":
        return StaticPolicy.from_text(entry["u"], shape)
    return DynamicPolicy.from_text(entry["da"], entry["u"], shape)


def all_reference_policies():
    for exp_id, kind in REFERENCE_POLICIES:
        yield exp_id, kind, reference_policy(exp_id, kind)
