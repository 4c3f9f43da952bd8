"""How much horizontal travel the yaw of T_GW needs before it can be fixed.

The yaw variance taken from the inverse Hessian shrinks with the squared
horizontal spread of the GPS fixes. Once it drops below sigma_theta^2 the
estimate is frozen.

    python3 demos/observability.py
"""

import numpy as np

from gpsfuse import ExtrinsicsGW, GpsFactor, GpsMeasurement, NavState, assess_observability
from gpsfuse.imu import PreintegratedImu

sigma_n = 0.2
sigma_theta = np.radians(1.0)
ext = ExtrinsicsGW(0.4, [5.0, -3.0, 1.0])

states, factors = {}, []
print(" fixes  travel [m]  yaw std [deg]  fixed")
for k in range(60):
    s = NavState(np.array([0.25 * k, 0.02 * k ** 1.5, 0.0]), t=0.1 * k)
    states[k] = s
    factors.append(GpsFactor(GpsMeasurement(s.t, ext.to_global(s.p), np.eye(3) * sigma_n ** 2), k,
                             PreintegratedImu.empty(t0=s.t)))
    if k % 5 == 4:
        rep = assess_observability(factors, states, ext, sigma_theta)
        travel = np.linalg.norm(states[k].p[:2] - states[0].p[:2])
        print(f"{k + 1:6d}  {travel:10.2f}  {np.degrees(np.sqrt(rep.p_theta_theta)):13.3f}  {rep.observable}")
