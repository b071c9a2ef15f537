"""Independent reference values for the unit tests.

Run with `python3 tests/oracles/derive.py`. Everything here is written from
the model definitions in plain Python, without touching the C++ sources; the
printed numbers are frozen into tests/unit/*.cpp.
"""

import math
import struct
from datetime import datetime, timezone

# Preetham luminance coefficients: A..E = slope * t + offset.
SLOPE = (0.1787, -0.3554, -0.0227, 0.1206, -0.0670)
OFFSET = (-1.4630, 0.4275, 5.3251, -2.5771, 0.3703)


def coeffs(t):
    return tuple(s * t + o for s, o in zip(SLOPE, OFFSET))


def perez(theta, gamma, k):
    a, b, c, d, e = k
    ct = max(math.cos(theta), 0.01)
    return (1 + a * math.exp(b / ct)) * (1 + c * math.exp(d * gamma) + e * math.cos(gamma) ** 2)


def unit(zen, az):
    return (math.sin(zen) * math.cos(az), math.sin(zen) * math.sin(az), math.cos(zen))


def angle(u, v):
    a, b = unit(*u), unit(*v)
    cx = (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])
    return math.atan2(math.sqrt(sum(c * c for c in cx)), sum(x * y for x, y in zip(a, b)))


def eval_lm(l, sky, t, sun_col, beta, kappa, sun):
    g = angle(l, sun)
    k = coeffs(t)
    ratio = perez(l[0], g, k) / perez(0.0, sun[0], k)
    fall = math.exp(-beta * math.exp(-kappa / g)) if g > 0 else 1.0
    return tuple(s * ratio + c * fall for s, c in zip(sky, sun_col))


def rgbe_decode(r, g, b, e):
    if e == 0:
        return (0.0, 0.0, 0.0)
    f = math.ldexp(1.0, e - 136)
    return tuple((v + 0.5) * f for v in (r, g, b))


def adam(steps, grad=1.0, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for n in range(1, steps + 1):
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mh = m / (1 - b1 ** n)
        vh = v / (1 - b2 ** n)
        out.append((m, v, -lr * mh / (math.sqrt(vh) + eps)))
    return out


def noaa(lat, lon, when):
    """NOAA solar calculator spreadsheet; returns (zenith, azimuth) in degrees."""
    jd = when.timestamp() / 86400.0 + 2440587.5
    jc = (jd - 2451545.0) / 36525.0
    l0 = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360
    m = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    mr = math.radians(m)
    c = (math.sin(mr) * (1.914602 - jc * (0.004817 + 0.000014 * jc)) + math.sin(2 * mr) * (0.019993 - 0.000101 * jc)
         + math.sin(3 * mr) * 0.000289)
    true_long = l0 + c
    app_long = true_long - 0.00569 - 0.00478 * math.sin(math.radians(125.04 - 1934.136 * jc))
    obliq0 = 23 + (26 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60) / 60
    obliq = obliq0 + 0.00256 * math.cos(math.radians(125.04 - 1934.136 * jc))
    decl = math.degrees(math.asin(math.sin(math.radians(obliq)) * math.sin(math.radians(app_long))))
    y = math.tan(math.radians(obliq / 2)) ** 2
    l0r = math.radians(l0)
    eot = 4 * math.degrees(y * math.sin(2 * l0r) - 2 * ecc * math.sin(mr) + 4 * ecc * y * math.sin(mr) * math.cos(2 * l0r)
                           - 0.5 * y * y * math.sin(4 * l0r) - 1.25 * ecc * ecc * math.sin(2 * mr))
    minutes = when.hour * 60 + when.minute + when.second / 60
    tst = (minutes + eot + 4 * lon) % 1440
    ha = tst / 4 - 180 if tst / 4 >= 0 else tst / 4 + 180
    latr, declr, har = math.radians(lat), math.radians(decl), math.radians(ha)
    zen = math.degrees(math.acos(math.sin(latr) * math.sin(declr) + math.cos(latr) * math.cos(declr) * math.cos(har)))
    zr = math.radians(zen)
    num = math.sin(latr) * math.cos(zr) - math.sin(declr)
    az = math.degrees(math.acos(max(-1.0, min(1.0, num / (math.cos(latr) * math.sin(zr))))))
    az = (az + 180) % 360 if ha > 0 else (540 - az) % 360
    return zen, az


def percentile(values, pct):
    s = sorted(values)
    pos = pct / 100.0 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def mirror_direction(x, y, n):
    nx = 2 * (x + 0.5) / n - 1
    ny = 2 * (y + 0.5) / n - 1
    nz = math.sqrt(1 - nx * nx - ny * ny)
    r = (2 * nz * nx, 2 * nz * ny, 2 * nz * nz - 1)
    return math.acos(r[2]), math.atan2(r[1], r[0]) % (2 * math.pi)


def f32(x):
    return struct.unpack("f", struct.pack("f", x))[0]


def main():
    print("angle_between((0.3,1.0),(0.7,2.0)) =", repr(angle((0.3, 1.0), (0.7, 2.0))))
    print("A(t=2) =", repr(coeffs(2)[0]), " C(t=10) =", repr(coeffs(10)[2]))
    print("perez_ratio(t=2.5, 0.6, 0.4, 0.5) =", repr(perez(0.6, 0.4, coeffs(2.5)) / perez(0.0, 0.5, coeffs(2.5))))
    print("sun falloff at gamma=kappa, beta=1 =", repr(math.exp(-math.exp(-1))))

    sky, sun_col, sun = (0.6, 0.8, 1.2), (20.0, 18.0, 15.0), (0.55, 1.3)
    for l in [(0.0, 0.0), (0.3, 1.0), (0.55, 1.35), (1.2, 4.0), (1.5, 2.9)]:
        print("eval_lm", l, [repr(v) for v in eval_lm(l, sky, 3.7, sun_col, 7.5, 0.42, sun)])

    for px in [(128, 128, 128, 129), (64, 32, 16, 130), (0, 0, 0, 0), (255, 0, 128, 120)]:
        print("rgbe", px, [repr(v) for v in rgbe_decode(*px)])

    for m, v, d in adam(3):
        print("adam m=%r v=%r delta=%r" % (m, v, d))

    cases = [(46.8, -71.2, datetime(2016, 6, 21, 16, 44, 48, tzinfo=timezone.utc)),
             (46.8, -71.2, datetime(2016, 6, 21, 12, 0, 0, tzinfo=timezone.utc)),
             (0.0, 0.0, datetime(2016, 3, 20, 12, 7, 0, tzinfo=timezone.utc)),
             (40.0, -105.0, datetime(2020, 1, 15, 17, 30, 0, tzinfo=timezone.utc))]
    for lat, lon, when in cases:
        z, a = noaa(lat, lon, when)
        print("noaa %s %.1f %.1f zenith=%.4f azimuth=%.3f" % (when.isoformat(), lat, lon, z, a))

    ramp = [float(v) for v in range(1, 101) for _ in range(3)]
    for pct in (0, 50, 99, 100):
        print("percentile ramp 1..100 (3 channels) p%g =" % pct, repr(percentile(ramp, pct)))

    for x, y in [(32, 32), (10, 40), (50, 20)]:
        z, a = mirror_direction(x, y, 64)
        print("mirror64 (%d,%d) zenith=%r azimuth=%r" % (x, y, z, a))

    # si-RMSE of a = (1, 0), b = (0, 1): alpha = 0, error sqrt(1/2).
    print("si_rmse 2-vector =", repr(math.sqrt(0.5)))
    print("tonemap forward(1) =", 2 * math.log2(2) - 1, " forward(0) =", 2 * math.log2(1) - 1)
    print("f32(0.1) =", repr(f32(0.1)))


if __name__ == "__main__":
    main()
