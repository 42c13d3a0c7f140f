"""Geometric clustered multipath channel generator.

Each sample is a complex tensor of shape (n_rb, n_r, n_t).  Every ray
contributes ``sqrt(P) * c * exp(j 2 pi nu t) * a_r(phi) a_t(theta)^T`` with
an extra per-RB phase ramp ``exp(-j 2 pi f_rb tau)`` from its delay, so the
frequency axis decorrelates at a rate set by the delay spread.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, OutOfModelError

SPEED_OF_LIGHT = 299_792_458.0
SUBCARRIERS_PER_RB = 12

PROFILE_NAMES = ("cdl-a-like", "cdl-b-like", "cdl-c-like", "cdl-d-like", "cdl-e-like")


@dataclass(frozen=True)
class ChannelProfile:
    """Knobs of one synthetic clustered-delay-line profile.

    Cluster powers/angles left as ``None`` are drawn per sample.  Angles are
    radians.  ``tx_array`` set to ``(rows, cols)`` uses a planar array whose
    elements are indexed row-major; ``None`` means a uniform linear array.
    """

    name: str
    n_clusters: int = 8
    rays_per_cluster: int = 20
    los: bool = False
    k_factor_db: float = 10.0
    cluster_powers: tuple = None
    cluster_aod: tuple = None
    cluster_aoa: tuple = None
    aod_range: float = math.radians(60.0)
    aoa_range: float = math.radians(90.0)
    angle_spread: float = math.radians(5.0)
    delay_spread: float = 100e-9
    ue_speeds_kmh: tuple = (4.8, 24.0, 40.0, 60.0)
    carrier_hz: float = 28e9
    scs_hz: float = 60e3
    n_rb: int = 4
    n_t: int = 8
    n_r: int = 2
    spacing: float = 0.5
    tx_array: tuple = None
    elevation_spread: float = math.radians(10.0)
    random_phase: bool = True

    def __post_init__(self):
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ConfigurationError(f"{self.name}: need at least one cluster and one ray")
        if not self.n_t >= self.n_r >= 1 or self.n_rb < 1:
            raise ConfigurationError(
                f"{self.name}: need n_t >= n_r >= 1 and n_rb >= 1, got {self.n_t}, {self.n_r}, {self.n_rb}")
        if self.spacing <= 0:
            raise ConfigurationError(f"{self.name}: element spacing must be positive")
        for field in ("cluster_powers", "cluster_aod", "cluster_aoa"):
            value = getattr(self, field)
            if value is not None and len(value) != self.n_clusters:
                raise ConfigurationError(f"{self.name}: {field} needs {self.n_clusters} entries")
        if self.cluster_powers is not None and min(self.cluster_powers) <= 0:
            raise ConfigurationError(f"{self.name}: cluster powers must be positive")
        if self.tx_array is not None and self.tx_array[0] * self.tx_array[1] != self.n_t:
            raise ConfigurationError(f"{self.name}: tx_array {self.tx_array} does not hold {self.n_t} elements")

    @property
    def doppler_range(self):
        """(min, max) Doppler shift in Hz over the configured UE speeds."""
        speeds = np.asarray(self.ue_speeds_kmh) / 3.6
        nu = speeds * self.carrier_hz / SPEED_OF_LIGHT
        return float(nu.min()), float(nu.max())

    @property
    def label(self):
        return PROFILE_NAMES.index(self.name) if self.name in PROFILE_NAMES else -1

    def with_dims(self, n_rb=None, n_t=None, n_r=None):
        n_t = self.n_t if n_t is None else n_t
        tx_array = self.tx_array
        if tx_array is not None and n_t != self.n_t:
            tx_array = planar_shape(n_t)
        return dataclasses.replace(
            self, n_rb=self.n_rb if n_rb is None else n_rb, n_t=n_t,
            n_r=self.n_r if n_r is None else n_r, tx_array=tx_array)


def planar_shape(n):
    """Most square (rows, cols) factorisation of ``n`` with rows <= cols."""
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


# cluster counts, delay spreads and LOS flags per built-in profile; the
# angle spreads are invented but keep the LOS profiles narrower
_BUILTIN = {
    "cdl-a-like": dict(n_clusters=8, los=False, delay_spread=129e-9,
                       angle_spread=math.radians(5.0)),
    "cdl-b-like": dict(n_clusters=8, los=False, delay_spread=634e-9,
                       angle_spread=math.radians(10.0)),
    "cdl-c-like": dict(n_clusters=8, los=False, delay_spread=634e-9,
                       angle_spread=math.radians(7.0)),
    "cdl-d-like": dict(n_clusters=4, los=True, delay_spread=65e-9,
                       angle_spread=math.radians(3.0)),
    "cdl-e-like": dict(n_clusters=4, los=True, delay_spread=65e-9,
                       angle_spread=math.radians(2.0), k_factor_db=13.0),
}


def get_profile(name, n_rb=4, n_t=8, n_r=2, **overrides):
    """Built-in profile by name at the requested dimensions."""
    try:
        base = dict(_BUILTIN[name])
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {', '.join(PROFILE_NAMES)}")
    base.update(overrides)
    base.setdefault("tx_array", planar_shape(n_t))
    return ChannelProfile(name=name, n_rb=n_rb, n_t=n_t, n_r=n_r, **base)


def steering_vector(theta, n_t, spacing=0.5):
    """ULA response ``exp(-j 2 pi k d sin(theta))`` for k = 0..n_t-1.

    ``theta`` may be an array; the element axis is appended last.
    """
    if n_t < 1 or spacing <= 0:
        raise ConfigurationError(f"steering_vector needs n_t >= 1 and spacing > 0, got {n_t}, {spacing}")
    k = np.arange(n_t)
    phase = -2j * np.pi * spacing * np.multiply.outer(np.sin(theta), k)
    return np.exp(phase)


def planar_steering_vector(azimuth, zenith, shape, spacing=0.5):
    """Planar-array response flattened row-major (rows vertical, cols horizontal)."""
    rows, cols = shape
    r = np.arange(rows)
    c = np.arange(cols)
    az, ze = np.asarray(azimuth), np.asarray(zenith)
    vert = np.exp(-2j * np.pi * spacing * np.multiply.outer(np.cos(ze), r))
    horiz = np.exp(-2j * np.pi * spacing * np.multiply.outer(np.sin(ze) * np.sin(az), c))
    return (vert[..., :, None] * horiz[..., None, :]).reshape(az.shape + (rows * cols,))


def los_probability(d_2d, h_ut):
    """UMa line-of-sight probability.

    Raises
    ------
    OutOfModelError
        For UE heights above 28 m or negative inputs.
    """
    if h_ut > 28 or h_ut < 0:
        raise OutOfModelError(f"UE height {h_ut} m outside the 0..28 m model range")
    if d_2d < 0:
        raise OutOfModelError(f"negative distance {d_2d}")
    if d_2d <= 18:
        return 1.0
    c = 0.0 if h_ut <= 13 else ((h_ut - 13) / 10) ** 1.5
    base = 18 / d_2d + math.exp(-d_2d / 63) * (1 - 18 / d_2d)
    boost = 1 + 0.8 * c * (d_2d / 100) ** 3 * math.exp(-d_2d / 150)
    return min(1.0, max(0.0, base * boost))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _tx_response(profile, aod, zod):
    if profile.tx_array is None:
        return steering_vector(aod, profile.n_t, profile.spacing)
    return planar_steering_vector(aod, zod, profile.tx_array, profile.spacing)


def generate_channel(profile, seed, t=0.0):
    """One complex (n_rb, n_r, n_t) channel snapshot, a pure function of (profile, seed, t)."""
    rng = _rng(seed)
    n, m = profile.n_clusters, profile.rays_per_cluster

    if profile.delay_spread > 0:
        tau_c = np.sort(rng.exponential(profile.delay_spread, size=n))
        tau_c -= tau_c[0]
    else:
        tau_c = np.zeros(n)
    if profile.cluster_powers is not None:
        power_c = np.asarray(profile.cluster_powers, dtype=np.float64)
    elif profile.delay_spread > 0:
        power_c = np.exp(-tau_c / profile.delay_spread) * 10 ** (-rng.normal(0, 3, n) / 10)
    else:
        power_c = np.ones(n)
    power_c = power_c / power_c.sum()

    aod_c = (np.asarray(profile.cluster_aod, dtype=np.float64) if profile.cluster_aod is not None
             else rng.uniform(-profile.aod_range, profile.aod_range, n))
    aoa_c = (np.asarray(profile.cluster_aoa, dtype=np.float64) if profile.cluster_aoa is not None
             else rng.uniform(-profile.aoa_range, profile.aoa_range, n))
    zod_c = np.pi / 2 + rng.uniform(-profile.elevation_spread, profile.elevation_spread, n)

    spread = profile.angle_spread
    aod = aod_c[:, None] + spread * rng.standard_normal((n, m))
    aoa = aoa_c[:, None] + spread * rng.standard_normal((n, m))
    zod = zod_c[:, None] + spread * rng.standard_normal((n, m))
    # intra-cluster delay jitter keeps rays of one cluster slightly apart in frequency
    tau = tau_c[:, None] + 0.1 * profile.delay_spread * rng.uniform(0.0, 1.0, (n, m))
    if profile.random_phase:
        coef = np.exp(2j * np.pi * rng.uniform(0.0, 1.0, (n, m)))
    else:
        coef = np.ones((n, m), dtype=np.complex128)
    speed = rng.choice(np.asarray(profile.ue_speeds_kmh)) / 3.6
    nu = speed * profile.carrier_hz / SPEED_OF_LIGHT * np.cos(aoa)
    amp = np.sqrt(np.repeat(power_c[:, None] / m, m, axis=1))
    gains = amp * coef * np.exp(2j * np.pi * nu * t)

    if profile.los:
        k = 10 ** (profile.k_factor_db / 10)
        gains = gains * math.sqrt(1.0 / (k + 1))
        los_aod = rng.uniform(-profile.aod_range, profile.aod_range)
        los_aoa = rng.uniform(-profile.aoa_range, profile.aoa_range)
        los_nu = speed * profile.carrier_hz / SPEED_OF_LIGHT * math.cos(los_aoa)
        los_gain = math.sqrt(k / (k + 1)) * np.exp(2j * np.pi * los_nu * t)
        gains = np.concatenate([gains.ravel(), [los_gain]])
        aod = np.concatenate([aod.ravel(), [los_aod]])
        aoa = np.concatenate([aoa.ravel(), [los_aoa]])
        zod = np.concatenate([zod.ravel(), [np.pi / 2]])
        tau = np.concatenate([tau.ravel(), [0.0]])

    gains, aod, aoa, zod, tau = (np.ravel(a) for a in (gains, aod, aoa, zod, tau))
    a_t = _tx_response(profile, aod, zod)                       # (rays, n_t)
    a_r = steering_vector(aoa, profile.n_r, profile.spacing)    # (rays, n_r)
    f_rb = np.arange(profile.n_rb) * SUBCARRIERS_PER_RB * profile.scs_hz
    ramp = np.exp(-2j * np.pi * np.multiply.outer(f_rb, tau))   # (n_rb, rays)
    return np.einsum("br,r,ri,rj->bij", ramp, gains, a_r, a_t, optimize=True)


def apply_channel(h, x, noise_power=0.0, seed=None):
    """``y = H x + n`` per RB with circularly symmetric Gaussian noise."""
    h = np.asarray(h)
    x = np.asarray(x)
    if h.ndim != 3 or x.shape != (h.shape[-1],):
        raise DimensionError(f"apply_channel: H {h.shape} incompatible with x {x.shape}")
    y = h @ x
    if noise_power > 0:
        rng = _rng(seed)
        scale = math.sqrt(noise_power / 2)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y
