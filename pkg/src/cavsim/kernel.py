"""Compiled per-block particle update.

One call moves a contiguous block of atoms through a full time step:
envelope, deterministic acceleration, position/velocity update, Poisson
scatter events and their recoil kicks. The numba generator is reseeded
nowhere: each block passes its own ``numpy.random.Generator``, so a
block's result depends only on its inputs and the state of the block's generator.
"""
import math

from numba import njit


@njit(cache=True, nogil=True)
def advance_block(pos, vel, env, dt, g, beta_c, beta_d, rate, p_cav, v_rec,
                  half_box, w_env, frame, isotropic, rng):
    n = pos.shape[0]
    inv_w2 = 2.0 / (w_env * w_env) if w_env > 0.0 else 0.0
    hdt2 = 0.5 * dt * dt
    for i in range(n):
        x = pos[i, 0]
        y = pos[i, 1]
        z = pos[i, 2]
        e = 0.0
        if abs(x) <= half_box[0] and abs(y) <= half_box[1] and abs(z) <= half_box[2]:
            e = 1.0
            if inv_w2 > 0.0:
                e = math.exp(-(x * x + y * y) * inv_w2)
        env[i] = e

        ax = -(beta_c + beta_d) * e * vel[i, 0]
        az = -g - beta_c * e * vel[i, 2]
        pos[i, 0] = x + vel[i, 0] * dt + hdt2 * ax
        pos[i, 1] = y + vel[i, 1] * dt
        pos[i, 2] = z + vel[i, 2] * dt + hdt2 * az
        vel[i, 0] += ax * dt
        vel[i, 2] += az * dt

        if rate <= 0.0 or e <= 0.0:
            continue
        k = rng.poisson(rate * e)
        for _ in range(k):
            # one uniform decides absorption sign, event type and cavity sign
            r = 2.0 * rng.random()
            if r < 1.0:
                vel[i, 0] += v_rec
            else:
                vel[i, 0] -= v_rec
                r -= 1.0
            if r < p_cav:
                if r < 0.5 * p_cav:
                    vel[i, 2] += v_rec
                else:
                    vel[i, 2] -= v_rec
            else:
                if isotropic:
                    u = 2.0 * rng.random() - 1.0
                else:
                    # rejection from (3/4)(1 - u^2) on [-1, 1], acceptance 2/3
                    while True:
                        u = 2.0 * rng.random() - 1.0
                        if rng.random() < 1.0 - u * u:
                            break
                # uniform azimuth as a point on the unit circle, no trig calls
                while True:
                    a = 2.0 * rng.random() - 1.0
                    b = 2.0 * rng.random() - 1.0
                    r2 = a * a + b * b
                    if 0.0 < r2 <= 1.0:
                        break
                s = math.sqrt(max(0.0, 1.0 - u * u)) / r2
                c1 = s * (a * a - b * b)
                c2 = s * (2.0 * a * b)
                for j in range(3):
                    vel[i, j] += v_rec * (c1 * frame[0, j] + c2 * frame[1, j] + u * frame[2, j])
