"""Physical constants and unit helpers.

Internal convention: every frequency-like quantity is carried in rad/s.
File and CLI interfaces use Hz; conversion happens exactly once at the
I/O boundary through ``hz`` / ``to_hz``.
"""

import scipy.constants as _cons

HBAR = _cons.hbar
ELEMENTARY_CHARGE = _cons.elementary_charge
EPSILON_0 = _cons.epsilon_0
ATOMIC_MASS = _cons.atomic_mass
TWO_PI = 2.0 * _cons.pi

# Mass of 171Yb+ (atomic mass units -> kg), the default ion species.
YB171_MASS = 170.9363258 * ATOMIC_MASS

# Counter-propagating 355-nm Raman pair: |Delta k| = 2 * 2*pi / lambda.
RAMAN_355_DELTA_K = 2.0 * TWO_PI / 355e-9


def hz(value):
    """Convert a frequency in Hz to rad/s."""
    return TWO_PI * value


def to_hz(value):
    """Convert a frequency in rad/s to Hz."""
    return value / TWO_PI
