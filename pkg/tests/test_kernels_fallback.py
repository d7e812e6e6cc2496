"""The numba kernels and the pure numpy fallback must produce the same runs."""

import json
import os
import subprocess
import sys

import numpy as np

CHILD = """
import json, numpy as np
from ddagossip._jit import PURE_NUMPY
from ddagossip.algorithms import StepSizeSchedule, dda_run, dpg_run
from ddagossip.network import broadcast_gossip, pairwise_gossip
from ddagossip.polyhedron import triangle_polyhedron
from ddagossip.problem import estimation_problem
prob = estimation_problem(m=4, rng=0, tilt_scale=0.5)
poly = triangle_polyhedron()
s = StepSizeSchedule(5.0, 0.67)
a = dda_run(prob, poly, pairwise_gossip(4), s, 400, [[0.0, 5.0], [0.0, 5.0]], 1, per_agent_init=True)
b = dpg_run(prob, poly, broadcast_gossip(4), s, 400, [[0.0, 5.0], [0.0, 5.0]], 2)
z = np.random.default_rng(3).uniform(-20, 20, size=(200, 2))
proj = [poly.project(zi).point.tolist() for zi in z]
print(json.dumps({"pure": PURE_NUMPY, "dda": a.x.tolist(), "dda_cons": a.consensus_error.tolist(),
                  "dpg": b.x.tolist(), "proj": proj}))
"""


def _child(flag):
    env = {**os.environ, "DDAGOSSIP_PURE_NUMPY": flag}
    out = subprocess.run([sys.executable, "-c", CHILD], env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_compiled_and_pure_numpy_agree():
    fast, slow = _child("0"), _child("1")
    assert fast["pure"] is False and slow["pure"] is True
    for key in ("dda", "dda_cons", "dpg", "proj"):
        assert np.allclose(fast[key], slow[key], rtol=0.0, atol=1e-9), key
