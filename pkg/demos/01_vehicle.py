"""
The vehicle: rigid body, rotors and the inner loop
==================================================

A tour of the simulator from rotor speeds up to velocity commands.
"""

# %%
# Hovering needs every rotor at the speed where total thrust equals weight.
import numpy as np

from quadpursuit.bench import full_tilt_maneuver
from quadpursuit.control import ActionCommand, InnerLoop
from quadpursuit.dynamics import QuadParams, QuadState, hover_rotor_speed, step

params = QuadParams()
omega = hover_rotor_speed(params)
print(f"hover rotor speed {omega:.2f} rad/s, thrust-to-weight {params.max_thrust_norm / 9.81:.2f}")

# %%
# Holding that speed for 1000 steps (16 s) should leave the vehicle where it started.
s = QuadState.at_rest((0.0, 0.0, 2.0))
for _ in range(1000):
    s = step(s, np.full(4, omega), params)
print("drift after 1000 steps:", np.linalg.norm(s.position_m - [0, 0, 2]))

# %%
# With rotors off, linear drag makes free fall approach the terminal speed g/c_d.
s = QuadState.at_rest((0.0, 0.0, 100.0))
for _ in range(63):
    s = step(s, np.zeros(4), params, dt_s=1 / 63)
exact = -(9.81 / params.drag_coeff) * (1 - np.exp(-params.drag_coeff))
print(f"v_z(1 s) = {s.velocity_mps[2]:.6f}, closed form {exact:.6f}")

# %%
# Policies never touch rotors directly. A rate command (body rates plus
# thrust per unit mass) goes through a PID and the mixer; a velocity command
# first goes through a tilt-limited cascade.
loop = InnerLoop(params)
s = QuadState.at_rest((0.0, 0.0, 2.0))
cmd = ActionCommand.velocity(np.array([15.0, 0.0, 0.0]))
for k in range(250):
    s = step(s, loop.rotor_speeds(cmd, s, 0.016), params)
    if k % 50 == 49:
        print(f"t={0.016 * (k + 1):4.2f}s  v={np.round(s.velocity_mps, 2)}")

# %%
# The envelope: an open-loop dash that pitches to 70 degrees and holds full thrust.
dash = full_tilt_maneuver(params)
print(f"peak {dash.peak_speed_mps:.2f} m/s; 12.9 m/s after {dash.distance_at_threshold_m:.2f} m")
